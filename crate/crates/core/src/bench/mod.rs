//! Benchmark workloads: path/2 over generated edge sets, the overhead
//! methodology, and the dynamic-programming drivers in [`dp`].

pub mod dp;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, EvalConfig, EvalStats, Program, Scheduling};
use crate::pagealloc::HeapStats;
use crate::tablespace::Design;
use crate::term::{PredId, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Complete binary tree with `depth` levels, parent → child.
    Btree,
    /// `depth` nodes, i → i+1 and last → first.
    Cycle,
    /// `depth`×`depth` lattice with edges both ways between orthogonal
    /// neighbours.
    Grid,
    /// Two chains of `depth` nodes, a_i → a_i+1, b_i → b_i+1, plus the
    /// rungs a_i → b_i.
    Pyramid,
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "btree" => Shape::Btree,
            "cycle" => Shape::Cycle,
            "grid" => Shape::Grid,
            "pyramid" => Shape::Pyramid,
            _ => return Err(format!("unknown edge shape {s:?} (btree, cycle, grid, pyramid)")),
        })
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Btree => "btree",
            Shape::Cycle => "cycle",
            Shape::Grid => "grid",
            Shape::Pyramid => "pyramid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub shape: Shape,
    pub depth: u32,
}

impl EdgeConfig {
    pub fn new(shape: Shape, depth: u32) -> Result<Self, String> {
        if depth == 0 {
            return Err("depth must be at least 1".into());
        }
        if shape == Shape::Btree && depth > 30 {
            return Err("btree depth above 30 is not supported".into());
        }
        Ok(EdgeConfig { shape, depth })
    }

    pub fn nodes(&self) -> u64 {
        let d = self.depth as u64;
        match self.shape {
            Shape::Btree => (1 << d) - 1,
            Shape::Cycle => d,
            Shape::Grid => d * d,
            Shape::Pyramid => 2 * d,
        }
    }
}

impl fmt::Display for EdgeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.shape, self.depth)
    }
}

/// Edge set of `cfg`, nodes numbered from 1.
pub fn gen_edges(cfg: &EdgeConfig) -> Vec<(i64, i64)> {
    let d = cfg.depth as i64;
    let mut e = Vec::new();
    match cfg.shape {
        Shape::Btree => {
            let n = (1i64 << d) - 1;
            for p in 1..=n / 2 {
                e.push((p, 2 * p));
                e.push((p, 2 * p + 1));
            }
        }
        Shape::Cycle => {
            for i in 1..=d {
                e.push((i, if i == d { 1 } else { i + 1 }));
            }
        }
        Shape::Grid => {
            let id = |r: i64, c: i64| r * d + c + 1;
            for r in 0..d {
                for c in 0..d {
                    if c + 1 < d {
                        e.push((id(r, c), id(r, c + 1)));
                        e.push((id(r, c + 1), id(r, c)));
                    }
                    if r + 1 < d {
                        e.push((id(r, c), id(r + 1, c)));
                        e.push((id(r + 1, c), id(r, c)));
                    }
                }
            }
        }
        Shape::Pyramid => {
            for i in 1..=d {
                if i < d {
                    e.push((i, i + 1));
                    e.push((d + i, d + i + 1));
                }
                e.push((i, d + i));
            }
        }
    }
    e
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn program_text(self) -> &'static str {
        match self {
            Direction::Left => PATH_LEFT,
            Direction::Right => PATH_RIGHT,
        }
    }
}

pub const PATH_LEFT: &str = ":- table path/2.
path(X, Z) :- path(X, Y), edge(Y, Z).
path(X, Z) :- edge(X, Z).
";

pub const PATH_RIGHT: &str = ":- table path/2.
path(X, Z) :- edge(X, Y), path(Y, Z).
path(X, Z) :- edge(X, Z).
";

/// A path benchmark such as `path-left:cycle:2000`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathBench {
    pub direction: Direction,
    pub edges: EdgeConfig,
}

impl FromStr for PathBench {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [dir, shape, depth] = parts[..] else {
            return Err(format!("expected path-left|path-right:SHAPE:DEPTH, got {s:?}"));
        };
        let direction = match dir {
            "path-left" => Direction::Left,
            "path-right" => Direction::Right,
            _ => return Err(format!("unknown benchmark {dir:?}")),
        };
        let depth = depth.parse::<u32>().map_err(|e| format!("bad depth {depth:?}: {e}"))?;
        Ok(PathBench {
            direction,
            edges: EdgeConfig::new(shape.parse()?, depth)?,
        })
    }
}

impl fmt::Display for PathBench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.direction {
            Direction::Left => "path-left",
            Direction::Right => "path-right",
        };
        write!(f, "{d}:{}", self.edges)
    }
}

/// The path program over the generated edges.
pub fn path_program(bench: &PathBench) -> Result<Program, EngineError> {
    let mut p = Program::parse(bench.direction.program_text())?;
    add_edges(&mut p, &gen_edges(&bench.edges))?;
    Ok(p)
}

pub fn add_edges(p: &mut Program, edges: &[(i64, i64)]) -> Result<(), EngineError> {
    for &(a, b) in edges {
        p.add_fact(Term::compound("edge", vec![Term::Int(a), Term::Int(b)]))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunStats {
    pub bench: String,
    pub design: Design,
    pub scheduling: Scheduling,
    pub threads: usize,
    pub seed: u64,
    /// Wall time of each run, seconds.
    pub times: Vec<f64>,
    /// Mean of `times`.
    pub wall_secs: f64,
    /// Statistics of the first run.
    pub stats: EvalStats,
    /// Allocator state at the end of the first run, before abolishing.
    pub heap: HeapStats,
    pub threads_agree: bool,
    /// Live blocks left after the last abolish (always 0 when healthy).
    pub live_blocks_after_abolish: u64,
    /// Typed plus free pages account for every page after each abolish.
    pub pages_conserved: bool,
}

/// Runs `program` with `query` on fresh tables `repeat` times.
pub fn run_program(
    name: &str,
    program: &Program,
    query: &Term,
    cfg: &EvalConfig,
    repeat: usize,
) -> Result<RunStats, EngineError> {
    let repeat = repeat.max(1);
    let mut cfg = cfg.clone();
    cfg.collect_answers = false;
    let mut times = Vec::with_capacity(repeat);
    let mut first = None;
    let mut agree = true;
    let mut live_after = 0;
    let mut conserved = true;
    for _ in 0..repeat {
        let e = Engine::new(program, cfg.clone())?;
        let t = Instant::now();
        let sol = e.solve(query)?;
        times.push(t.elapsed().as_secs_f64());
        agree &= sol.threads_agree;
        if first.is_none() {
            first = Some((sol.stats, e.space().heap_stats()));
        }
        e.abolish()?;
        let h = e.space().heap_stats();
        live_after = h.live_blocks();
        conserved &= h.typed_pages() + h.free_pages == h.total_pages;
    }
    let (stats, heap) = first.expect("at least one run");
    Ok(RunStats {
        bench: name.to_string(),
        design: cfg.design,
        scheduling: cfg.scheduling,
        threads: cfg.threads,
        seed: cfg.seed,
        wall_secs: times.iter().sum::<f64>() / times.len() as f64,
        times,
        stats,
        heap,
        threads_agree: agree,
        live_blocks_after_abolish: live_after,
        pages_conserved: conserved,
    })
}

/// Runs `path(X, Y)` for `bench` on every worker thread.
pub fn run_path(bench: &PathBench, cfg: &EvalConfig, repeat: usize) -> Result<RunStats, EngineError> {
    let p = path_program(bench)?;
    let q = Term::compound("path", vec![Term::Var(0), Term::Var(1)]);
    debug_assert!(p.is_tabled(PredId::new("path", 2)));
    run_program(&bench.to_string(), &p, &q, cfg, repeat)
}

#[derive(Clone, Debug, Serialize)]
pub struct OverheadRow {
    pub design: Design,
    pub scheduling: Scheduling,
    pub threads: usize,
    pub benches: usize,
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    pub stddev: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
}

/// Overhead ratio `D_BT / NS_B1` per benchmark, aggregated per
/// (design, scheduling, threads). `base` maps benchmark names to the
/// single-thread NS mean time.
pub fn overhead_report(base: &BTreeMap<String, f64>, runs: &[RunStats]) -> Result<OverheadReport, String> {
    let mut groups: BTreeMap<(Design, String, usize), (Scheduling, Vec<f64>)> = BTreeMap::new();
    for r in runs {
        let b = base
            .get(&r.bench)
            .ok_or_else(|| format!("no NS single-thread base run for {}", r.bench))?;
        if *b <= 0.0 {
            return Err(format!("base time of {} is not positive", r.bench));
        }
        groups
            .entry((r.design, r.scheduling.to_string(), r.threads))
            .or_insert_with(|| (r.scheduling, Vec::new()))
            .1
            .push(r.wall_secs / b);
    }
    let rows = groups
        .into_iter()
        .map(|((design, _, threads), (scheduling, v))| {
            let n = v.len() as f64;
            let avg = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
            OverheadRow {
                design,
                scheduling,
                threads,
                benches: v.len(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                avg,
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                stddev: var.sqrt(),
            }
        })
        .collect();
    Ok(OverheadReport { rows })
}
