//! Knapsack and LCS evaluated through tabled subgoals `ks(I, C, P)` and
//! `lcs(I, J, L)`, driven by user-level schedulers.
//!
//! * TD1 — top-down from the final cell; at every cell each thread picks the
//!   branch order at random.
//! * TD2 — as TD1, but first solves `(N - d, C)` for a random `d` up to 10%
//!   of `N`.
//! * BU — columns are split in chunks of `ceil(cols / NT)`; each thread fills
//!   its chunk row by row and computes any missing cell itself.
//!
//! TD keeps the best value with the `max` mode; BU records one finished
//! answer per cell with plain tabling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, EvalConfig};
use crate::pagealloc::{HeapStats, LocalHeap};
use crate::tablespace::{
    decode_answer, CompleteOutcome, Design, Mode, ModeOutcome, PredHandle, Status, SubgoalHandle,
    TableSpace, TableSpaceConfig,
};
use crate::term::{canonicalize, subst_tokens, PredId, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Knapsack,
    Lcs,
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "knapsack" => Ok(Problem::Knapsack),
            "lcs" => Ok(Problem::Lcs),
            _ => Err(format!("unknown problem {s:?} (knapsack, lcs)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Td1,
    Td2,
    Bu,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Td1, Approach::Td2, Approach::Bu];

    fn uses_modes(self) -> bool {
        self != Approach::Bu
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "td1" => Ok(Approach::Td1),
            "td2" => Ok(Approach::Td2),
            "bu" => Ok(Approach::Bu),
            _ => Err(format!("unknown approach {s:?} (td1, td2, bu)")),
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::Td1 => "td1",
            Approach::Td2 => "td2",
            Approach::Bu => "bu",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpDataset {
    pub problem: Problem,
    /// Items (knapsack) or sequence length (LCS).
    pub n: usize,
    /// Knapsack capacity; ignored for LCS.
    pub c: usize,
    /// Values are drawn from `[1, frac·n]`.
    pub frac: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum DpData {
    Knapsack {
        weights: Vec<i64>,
        profits: Vec<i64>,
        capacity: i64,
    },
    Lcs {
        a: Vec<i64>,
        b: Vec<i64>,
    },
}

impl DpDataset {
    pub fn knapsack(n: usize, c: usize, frac: f64, seed: u64) -> Self {
        DpDataset {
            problem: Problem::Knapsack,
            n,
            c,
            frac,
            seed,
        }
    }

    pub fn lcs(n: usize, frac: f64, seed: u64) -> Self {
        DpDataset {
            problem: Problem::Lcs,
            n,
            c: 0,
            frac,
            seed,
        }
    }

    pub fn max_value(&self) -> i64 {
        ((self.frac * self.n as f64).round() as i64).max(1)
    }

    pub fn generate(&self) -> Result<DpData, String> {
        if !(self.frac > 0.0 && self.frac <= 1.0) {
            return Err(format!("value fraction must be in (0, 1], got {}", self.frac));
        }
        let hi = self.max_value();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(1..=hi)).collect::<Vec<_>>();
        Ok(match self.problem {
            Problem::Knapsack => {
                let weights = draw(self.n);
                let profits = draw(self.n);
                DpData::Knapsack {
                    weights,
                    profits,
                    capacity: self.c as i64,
                }
            }
            Problem::Lcs => {
                let a = draw(self.n);
                let b = draw(self.n);
                DpData::Lcs { a, b }
            }
        })
    }
}

/// 0/1 knapsack by the one-row table recurrence.
pub fn knapsack_oracle(weights: &[i64], profits: &[i64], capacity: i64) -> i64 {
    let cap = capacity.max(0) as usize;
    let mut best = vec![0i64; cap + 1];
    for (&w, &p) in weights.iter().zip(profits) {
        let w = w as usize;
        for c in (w..=cap).rev() {
            best[c] = best[c].max(best[c - w] + p);
        }
    }
    best[cap]
}

pub fn lcs_oracle(a: &[i64], b: &[i64]) -> i64 {
    let mut prev = vec![0i64; b.len() + 1];
    let mut cur = vec![0i64; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn oracle(data: &DpData) -> i64 {
    match data {
        DpData::Knapsack {
            weights,
            profits,
            capacity,
        } => knapsack_oracle(weights, profits, *capacity),
        DpData::Lcs { a, b } => lcs_oracle(a, b),
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct DpStats {
    pub lookups: u64,
    /// Cells evaluated by this thread.
    pub computed: u64,
    /// Cells found complete.
    pub reused: u64,
    pub inserted: u64,
    pub replaced: u64,
    pub discarded: u64,
}

impl DpStats {
    fn add(&mut self, o: &DpStats) {
        self.lookups += o.lookups;
        self.computed += o.computed;
        self.reused += o.reused;
        self.inserted += o.inserted;
        self.replaced += o.replaced;
        self.discarded += o.discarded;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DpRun {
    pub problem: Problem,
    pub approach: Approach,
    pub design: Design,
    pub threads: usize,
    pub seed: u64,
    /// Result of thread 0.
    pub value: i64,
    pub per_thread: Vec<i64>,
    pub wall_secs: f64,
    pub stats: DpStats,
    pub heap: HeapStats,
    pub live_blocks_after_abolish: u64,
    pub pages_conserved: bool,
}

struct Worker<'a> {
    space: &'a TableSpace,
    heap: LocalHeap,
    pred: PredHandle,
    name: &'static str,
    data: &'a DpData,
    modes: bool,
    rng: ChaCha8Rng,
    stats: DpStats,
}

impl<'a> Worker<'a> {
    fn read(&self, h: &SubgoalHandle) -> Result<i64, EngineError> {
        let ans = self.space.answers(h);
        let [toks] = &ans[..] else {
            return Err(EngineError::Internal(format!("cell has {} answers", ans.len())));
        };
        match decode_answer(toks, 1)?.as_slice() {
            [Term::Int(v)] => Ok(*v),
            other => Err(EngineError::Internal(format!("unexpected cell answer {other:?}"))),
        }
    }

    /// Sub-cells of `(i, j)` with the amount each adds.
    fn branches(&self, i: i64, j: i64) -> Vec<(i64, i64, i64)> {
        match self.data {
            DpData::Knapsack { weights, profits, .. } => {
                let w = weights[i as usize - 1];
                let mut v = vec![(i - 1, j, 0)];
                if w <= j {
                    v.push((i - 1, j - w, profits[i as usize - 1]));
                }
                v
            }
            DpData::Lcs { a, b } => {
                if a[i as usize - 1] == b[j as usize - 1] {
                    vec![(i - 1, j - 1, 1)]
                } else {
                    vec![(i - 1, j, 0), (i, j - 1, 0)]
                }
            }
        }
    }

    fn is_base(&self, i: i64, j: i64) -> bool {
        match self.data {
            DpData::Knapsack { .. } => i == 0,
            DpData::Lcs { .. } => i == 0 || j == 0,
        }
    }

    fn value(&mut self, i: i64, j: i64) -> Result<i64, EngineError> {
        if self.is_base(i, j) {
            return Ok(0);
        }
        let key = canonicalize(&Term::compound(self.name, vec![Term::Int(i), Term::Int(j), Term::Var(0)]))?;
        self.stats.lookups += 1;
        let lk = self.space.lookup(&mut self.heap, self.pred, &key)?;
        match lk.status {
            Status::Complete => {
                self.stats.reused += 1;
                return self.read(&lk.handle);
            }
            Status::Incomplete => {
                return Err(EngineError::Internal(format!("cell ({i}, {j}) is already under evaluation")))
            }
            Status::New => {}
        }
        self.stats.computed += 1;
        let h = lk.handle;
        let mut br = self.branches(i, j);
        if self.modes {
            br.shuffle(&mut self.rng);
            for (ci, cj, add) in br {
                let v = self.value(ci, cj)? + add;
                let (o, _) = self
                    .space
                    .mode_insert(&mut self.heap, &h, &[], &[Term::Int(v)], &[Mode::Max])?;
                match o {
                    ModeOutcome::Inserted => self.stats.inserted += 1,
                    ModeOutcome::Replaced => self.stats.replaced += 1,
                    ModeOutcome::Discarded => self.stats.discarded += 1,
                }
            }
        } else {
            let mut best = 0;
            for (ci, cj, add) in br {
                best = best.max(self.value(ci, cj)? + add);
            }
            self.space
                .record_answer(&mut self.heap, &h, &subst_tokens(&[Term::Int(best)])?)?;
            self.stats.inserted += 1;
        }
        let h = match self.space.complete_and_release(&mut self.heap, &h)? {
            CompleteOutcome::Superseded => self
                .space
                .published(&h)
                .ok_or_else(|| EngineError::Internal("superseded without a published frame".into()))?,
            _ => h,
        };
        self.read(&h)
    }

    fn dims(&self) -> (i64, i64) {
        match self.data {
            DpData::Knapsack {
                weights, capacity, ..
            } => (weights.len() as i64, *capacity),
            DpData::Lcs { a, b } => (a.len() as i64, b.len() as i64),
        }
    }

    fn run(&mut self, approach: Approach, tid: usize, nt: usize) -> Result<i64, EngineError> {
        let (n, m) = self.dims();
        match approach {
            Approach::Td1 => {}
            Approach::Td2 => {
                let d = self.rng.gen_range(0..=n / 10);
                if d > 0 {
                    self.value(n - d, m)?;
                }
            }
            Approach::Bu => {
                // knapsack columns run 0..=C, LCS columns 1..=M
                let first = if matches!(self.data, DpData::Knapsack { .. }) { 0 } else { 1 };
                let cols = (m - first + 1).max(0);
                let chunk = (cols + nt as i64 - 1) / nt as i64;
                let lo = first + chunk * tid as i64;
                let hi = (lo + chunk - 1).min(m);
                for i in 1..=n {
                    for j in lo..=hi {
                        self.value(i, j)?;
                    }
                }
            }
        }
        self.value(n, m)
    }
}

/// Solves `dataset` with `approach` on `eval.threads` workers sharing one
/// table space. Scheduling in `eval` is ignored.
pub fn run_dp(dataset: &DpDataset, approach: Approach, eval: &EvalConfig) -> Result<DpRun, EngineError> {
    let data = dataset.generate().map_err(EngineError::Config)?;
    run_dp_data(dataset.problem, &data, approach, eval)
}

pub fn run_dp_data(
    problem: Problem,
    data: &DpData,
    approach: Approach,
    eval: &EvalConfig,
) -> Result<DpRun, EngineError> {
    if eval.threads == 0 || eval.threads > crate::tablespace::MAX_THREADS {
        return Err(EngineError::Config(format!("thread count {} out of range", eval.threads)));
    }
    let mut tcfg = TableSpaceConfig::new(eval.design);
    tcfg.trie = eval.trie.clone();
    tcfg.alloc = eval.alloc.clone();
    tcfg.pas_discard = eval.pas_discard;
    let space = TableSpace::new(tcfg)?;
    let name = match problem {
        Problem::Knapsack => "ks",
        Problem::Lcs => "lcs",
    };
    let modes = approach
        .uses_modes()
        .then(|| vec![Mode::Index, Mode::Index, Mode::Max]);
    let pred = {
        let mut h = space.heap(0);
        space.register(&mut h, PredId::new(name, 3), modes)?
    };
    let nt = eval.threads;
    let t0 = Instant::now();
    let results: Vec<Result<(i64, DpStats), EngineError>> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..nt)
            .map(|t| {
                let space = &space;
                std::thread::Builder::new()
                    .name(format!("dp-worker-{t}"))
                    .stack_size(eval.stack_size.max(64 << 20))
                    .spawn_scoped(sc, move || {
                        let _g = space.attach();
                        let mut w = Worker {
                            space,
                            heap: space.heap(t as u32),
                            pred,
                            name,
                            data,
                            modes: approach.uses_modes(),
                            rng: ChaCha8Rng::seed_from_u64(eval.seed ^ t as u64),
                            stats: DpStats::default(),
                        };
                        let v = w.run(approach, t, nt)?;
                        Ok((v, w.stats))
                    })
                    .expect("spawn worker")
            })
            .collect();
        hs.into_iter()
            .enumerate()
            .map(|(t, h)| h.join().unwrap_or(Err(EngineError::Worker(t))))
            .collect()
    });
    let wall_secs = t0.elapsed().as_secs_f64();
    let mut per_thread = Vec::with_capacity(nt);
    let mut stats = DpStats::default();
    for r in results {
        let (v, s) = r?;
        per_thread.push(v);
        stats.add(&s);
    }
    let heap = space.heap_stats();
    let mut h = space.heap(crate::tablespace::MAX_THREADS as u32 - 1);
    space.abolish(&mut h)?;
    drop(h);
    let after = space.heap_stats();
    Ok(DpRun {
        problem,
        approach,
        design: eval.design,
        threads: nt,
        seed: eval.seed,
        value: per_thread[0],
        per_thread,
        wall_secs,
        stats,
        heap,
        live_blocks_after_abolish: after.live_blocks(),
        pages_conserved: after.typed_pages() + after.free_pages == after.total_pages,
    })
}
