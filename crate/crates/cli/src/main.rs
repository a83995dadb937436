use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use tabkit::bench::dp::{oracle, run_dp_data, Approach, DpDataset, Problem};
use tabkit::bench::{overhead_report, run_path, run_program, PathBench, RunStats};
use tabkit::engine::{parse_goal, EvalConfig, Program, Scheduling};
use tabkit::memmodel::{reconcile, sweep, SweepRow, SweepSpec};
use tabkit::tablespace::Design;
use tabkit::trie::HashScheme;

#[derive(Parser)]
#[command(name = "tabkit", version, about = "Concurrent tabling engine and table-space benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run path benchmarks or a program file.
    Bench(BenchArgs),
    /// Run a dynamic-programming benchmark.
    Dp(DpArgs),
    /// Evaluate the memory model.
    Memmodel(MemArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    HashTrie,
    Doubling,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "ns")]
    design: Design,
    #[arg(long, default_value = "local")]
    sched: Scheduling,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hash mechanism for trie levels.
    #[arg(long, value_enum, default_value = "hash-trie")]
    scheme: Scheme,
    /// PAS: keep superseded private frames instead of freeing them.
    #[arg(long)]
    pas_keep: bool,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        let mut c = EvalConfig::new(self.design, self.sched, self.threads);
        c.seed = self.seed;
        c.trie.scheme = match self.scheme {
            Scheme::HashTrie => HashScheme::HashTrie,
            Scheme::Doubling => HashScheme::Doubling,
        };
        c.pas_discard = !self.pas_keep;
        c
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark name, e.g. path-left:cycle:2000 (repeatable).
    #[arg(long = "bench")]
    benches: Vec<String>,
    /// Program file in the table/fact/rule text format.
    #[arg(long, conflicts_with = "benches")]
    program: Option<PathBuf>,
    /// Query for --program.
    #[arg(long, requires = "program")]
    query: Option<String>,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Also run NS with one thread and report the overhead ratio.
    #[arg(long)]
    overhead: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DpArgs {
    #[arg(long)]
    problem: Problem,
    #[arg(long, default_value = "td1")]
    approach: Approach,
    #[arg(long)]
    n: usize,
    /// Knapsack capacity.
    #[arg(long, default_value_t = 0)]
    c: usize,
    #[arg(long, default_value_t = 0.5)]
    frac: f64,
    /// Seed of the generated data set.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct MemArgs {
    /// Parameter grid: {"nt": [..], "nc": [..], "st": [..], "at": [..], "sizes"?: {..}}.
    #[arg(long, conflicts_with = "reconcile")]
    sweep: Option<PathBuf>,
    /// Run a path benchmark and compare the prediction with the allocator.
    #[arg(long)]
    reconcile: Option<String>,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: &Option<PathBuf>, text: String) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn eval_json(c: &EvalConfig) -> Value {
    json!({
        "design": c.design,
        "scheduling": c.scheduling,
        "threads": c.threads,
        "seed": c.seed,
        "scheme": match c.trie.scheme { HashScheme::HashTrie => "hash-trie", HashScheme::Doubling => "doubling" },
        "pas_discard": c.pas_discard,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.eval.config();
    cfg.validate()?;
    let mut runs: Vec<RunStats> = Vec::new();
    let mut base = BTreeMap::new();
    let base_cfg = EvalConfig {
        design: Design::Ns,
        scheduling: Scheduling::Local,
        threads: 1,
        ..cfg.clone()
    };
    if let Some(path) = &a.program {
        let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let prog = Program::parse(&src)?;
        let q = parse_goal(a.query.as_deref().context("--program needs --query")?)?;
        let name = path.display().to_string();
        runs.push(run_program(&name, &prog, &q, &cfg, a.repeat)?);
        if a.overhead {
            base.insert(name.clone(), run_program(&name, &prog, &q, &base_cfg, a.repeat)?.wall_secs);
        }
    } else {
        if a.benches.is_empty() {
            bail!("give at least one --bench or a --program");
        }
        for b in &a.benches {
            let pb: PathBench = b.parse().map_err(anyhow::Error::msg)?;
            runs.push(run_path(&pb, &cfg, a.repeat)?);
            if a.overhead {
                base.insert(pb.to_string(), run_path(&pb, &base_cfg, a.repeat)?.wall_secs);
            }
        }
    }
    let mut doc = json!({
        "config": { "eval": eval_json(&cfg), "repeat": a.repeat },
        "stats": if runs.len() == 1 { to_json(&runs[0])? } else { to_json(&runs)? },
    });
    if a.overhead {
        let rep = overhead_report(&base, &runs).map_err(anyhow::Error::msg)?;
        doc["overhead"] = to_json(&rep)?;
    }
    emit(&a.out, serde_json::to_string_pretty(&doc)?)
}

fn dp(a: &DpArgs) -> Result<()> {
    let cfg = a.eval.config();
    let ds = DpDataset {
        problem: a.problem,
        n: a.n,
        c: a.c,
        frac: a.frac,
        seed: a.data_seed,
    };
    let data = ds.generate().map_err(anyhow::Error::msg)?;
    let want = oracle(&data);
    let run = run_dp_data(a.problem, &data, a.approach, &cfg)?;
    let agree = run.per_thread.iter().all(|&v| v == want);
    let doc = json!({
        "config": { "eval": eval_json(&cfg), "dataset": ds, "approach": a.approach },
        "stats": run,
        "oracle": want,
        "matches_oracle": agree,
    });
    emit(&a.out, serde_json::to_string_pretty(&doc)?)?;
    if !agree {
        bail!("result differs from the oracle ({want})");
    }
    Ok(())
}

fn memmodel(a: &MemArgs) -> Result<()> {
    if let Some(p) = &a.sweep {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let spec: SweepSpec = serde_json::from_str(&text).context("parsing sweep parameters")?;
        let rows = sweep(&spec)?;
        let out = match a.format {
            Format::Json => serde_json::to_string_pretty(&json!({ "config": spec, "rows": rows }))?,
            Format::Csv => std::iter::once(SweepRow::CSV_HEADER.to_string())
                .chain(rows.iter().map(SweepRow::csv))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        return emit(&a.out, out);
    }
    let Some(b) = &a.reconcile else {
        bail!("give --sweep FILE or --reconcile BENCH");
    };
    let pb: PathBench = b.parse().map_err(anyhow::Error::msg)?;
    let cfg = a.eval.config();
    let e = tabkit::engine::Engine::new(&tabkit::bench::path_program(&pb)?, {
        let mut c = cfg.clone();
        c.collect_answers = false;
        c
    })?;
    e.solve(&parse_goal("path(X, Y)")?)?;
    let rep = reconcile(&e.space().census(), &e.space().heap_stats(), cfg.threads as u64)?;
    e.abolish()?;
    emit(
        &a.out,
        serde_json::to_string_pretty(&json!({ "config": { "eval": eval_json(&cfg), "bench": b }, "report": rep }))?,
    )
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Bench(a) => bench(a),
        Cmd::Dp(a) => dp(a),
        Cmd::Memmodel(a) => memmodel(a),
    }
}
