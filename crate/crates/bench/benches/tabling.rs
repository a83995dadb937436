use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tabkit::bench::dp::{run_dp, Approach, DpDataset};
use tabkit::bench::{path_program, PathBench};
use tabkit::engine::Engine;
use tabkit::pagealloc::{AllocConfig, PageAllocator, TypeSpec};
use tabkit::{parse_goal, Design, EvalConfig, Scheduling};
use tabkit_bench::{eval_matrix, label};

fn path(c: &mut Criterion) {
    let q = parse_goal("path(X, Y)").unwrap();
    for name in ["path-left:cycle:300", "path-right:grid:12"] {
        let b: PathBench = name.parse().unwrap();
        let prog = path_program(&b).unwrap();
        let mut g = c.benchmark_group(name);
        g.sample_size(10);
        for cfg in eval_matrix(&[1, 4]) {
            g.bench_with_input(BenchmarkId::from_parameter(label(&cfg)), &cfg, |bch, cfg| {
                bch.iter(|| {
                    let e = Engine::new(&prog, cfg.clone()).unwrap();
                    let s = e.solve(&q).unwrap();
                    e.abolish().unwrap();
                    s.stats.answers
                })
            });
        }
        g.finish();
    }
}

fn dp(c: &mut Criterion) {
    let ds = DpDataset::knapsack(60, 120, 0.3, 1);
    let mut g = c.benchmark_group("knapsack-60x120");
    g.sample_size(10);
    for a in Approach::ALL {
        for d in [Design::Ns, Design::Ss, Design::Pas] {
            let cfg = EvalConfig::new(d, Scheduling::Local, 2);
            g.bench_function(format!("{a}-{d}-2"), |b| b.iter(|| run_dp(&ds, a, &cfg).unwrap().value));
        }
    }
    g.finish();
}

fn alloc(c: &mut Criterion) {
    let a = PageAllocator::new(
        AllocConfig::default(),
        &[TypeSpec {
            name: "node".into(),
            block_size: 40,
        }],
    )
    .unwrap();
    let ty = tabkit::pagealloc::StructType(0);
    c.bench_function("alloc-free-10k", |b| {
        let mut h = a.local_heap(0);
        let mut v = Vec::with_capacity(10_000);
        b.iter(|| {
            for _ in 0..10_000 {
                v.push(h.alloc_block(ty).unwrap());
            }
            for blk in v.drain(..) {
                h.free_block(ty, blk).unwrap();
            }
        })
    });
}

criterion_group!(benches, path, dp, alloc);
criterion_main!(benches);
