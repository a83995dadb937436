//! Tabled evaluation over the table space.
//!
//! Every tabled call is looked up in the table space. A call that creates a
//! frame becomes a *generator*: its clauses run once. Every occurrence of a
//! tabled literal in a clause body becomes a *consumer*: a saved
//! continuation with a cursor into the callee's answer list. Each answer is
//! handed to each consumer exactly once, so evaluation is semi-naive.
//!
//! Work proceeds in rounds. A round drains the task queue. At its end,
//! goals that can no longer gain answers are completed, and consumers that
//! lag behind their callee are scheduled for the next round.
//!
//! * local: new answers are only stored; consumers pick them up at the next
//!   round boundary. Tasks run in FIFO order.
//! * batched: a new answer is delivered straight away to the goal's first
//!   consumer (LIFO task order).
//!
//! In worst-case mode every worker thread evaluates the same query
//! independently, sharing tables as the design allows.

pub mod parse;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pagealloc::{AllocConfig, AllocError, LocalHeap};
use crate::tablespace::{
    AnswerCursor, AnswerOutcome, Design, Mode, ModeOutcome, PredHandle, Status, SubgoalHandle,
    TableError, TableSpace, TableSpaceConfig, MAX_THREADS,
};
use crate::term::{
    canonicalize, decode_subst, instantiate, subst_tokens, PredId, SubgoalKey, Term, TermError,
    Token,
};
use crate::trie::{leaf_tokens, TrieConfig, TrieStats};

pub use parse::parse_goal;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("program error: {0}")]
    Program(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error("instantiation error: {0}")]
    Instantiation(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("worker {0} panicked")]
    Worker(usize),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<AllocError> for EngineError {
    fn from(e: AllocError) -> Self {
        EngineError::Table(TableError::Alloc(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduling {
    Local,
    Batched,
}

impl fmt::Display for Scheduling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduling::Local => "local",
            Scheduling::Batched => "batched",
        })
    }
}

impl FromStr for Scheduling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Scheduling::Local),
            "batched" => Ok(Scheduling::Batched),
            _ => Err(format!("unknown scheduling {s}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub design: Design,
    pub scheduling: Scheduling,
    pub threads: usize,
    pub seed: u64,
    pub trie: TrieConfig,
    pub alloc: AllocConfig,
    pub pas_discard: bool,
    /// Keep every thread's answer list for the returned [`Solution`].
    pub collect_answers: bool,
    pub stack_size: usize,
}

impl EvalConfig {
    pub fn new(design: Design, scheduling: Scheduling, threads: usize) -> Self {
        EvalConfig {
            design,
            scheduling,
            threads,
            seed: 0,
            trie: TrieConfig::default(),
            alloc: AllocConfig::default(),
            pas_discard: true,
            collect_answers: true,
            stack_size: 16 << 20,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.threads == 0 || self.threads > MAX_THREADS {
            return Err(EngineError::Config(format!(
                "thread count must be between 1 and {MAX_THREADS}, got {}",
                self.threads
            )));
        }
        if self.design == Design::Cs {
            return Err(EngineError::Config(
                "the cs design exists only in the memory model".into(),
            ));
        }
        if self.design == Design::Fs && self.scheduling == Scheduling::Batched {
            return Err(EngineError::Config(
                "fs supports local scheduling only; use pac for batched scheduling".into(),
            ));
        }
        Ok(())
    }
}

/// A rule. Variables are numbered `0..nvars`.
#[derive(Clone, Debug)]
pub struct Clause {
    pub head: Term,
    pub body: Vec<Term>,
    pub nvars: u32,
}

#[derive(Default, Clone, Debug)]
struct FactTable {
    rows: Vec<Arc<[Term]>>,
    index: HashMap<u64, Vec<u32>>,
}

fn index_word(t: &Term) -> Option<u64> {
    match t {
        Term::Atom(s) => Some(Token::Atom(*s).to_word()),
        Term::Int(i) => Some(Token::Int(*i).to_word()),
        _ => None,
    }
}

#[derive(Default, Clone, Debug)]
pub struct Program {
    tabled: Vec<(PredId, Option<Vec<Mode>>)>,
    facts: HashMap<PredId, FactTable>,
    fact_order: Vec<PredId>,
    rules: Vec<Clause>,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(src: &str) -> Result<Program, EngineError> {
        let mut p = Program::new();
        parse::parse_into(src, &mut p)?;
        Ok(p)
    }

    /// Adds more clauses in text form.
    pub fn extend_from_str(&mut self, src: &str) -> Result<(), EngineError> {
        parse::parse_into(src, self)
    }

    pub fn table(&mut self, pred: PredId, modes: Option<Vec<Mode>>) -> Result<(), EngineError> {
        if let Some(m) = &modes {
            if m.len() != pred.arity as usize {
                return Err(EngineError::Program(format!("mode list of {pred} has the wrong length")));
            }
        }
        match self.tabled.iter_mut().find(|(p, _)| *p == pred) {
            Some(e) => e.1 = modes,
            None => self.tabled.push((pred, modes)),
        }
        Ok(())
    }

    pub fn is_tabled(&self, pred: PredId) -> bool {
        self.tabled.iter().any(|(p, _)| *p == pred)
    }

    pub fn modes(&self, pred: PredId) -> Option<&[Mode]> {
        self.tabled
            .iter()
            .find(|(p, _)| *p == pred)
            .and_then(|(_, m)| m.as_deref())
    }

    pub fn add_fact(&mut self, fact: Term) -> Result<(), EngineError> {
        let pred = fact.pred()?;
        if !fact.is_ground() {
            return Err(EngineError::Program(format!("fact {fact} is not ground")));
        }
        fact.validate()?;
        let t = self.facts.entry(pred).or_insert_with(|| {
            self.fact_order.push(pred);
            FactTable::default()
        });
        let args: Arc<[Term]> = fact.args().to_vec().into();
        if let Some(w) = args.first().and_then(index_word) {
            t.index.entry(w).or_default().push(t.rows.len() as u32);
        }
        t.rows.push(args);
        Ok(())
    }

    /// Adds a rule; variables must be numbered densely from 0.
    pub fn add_rule(&mut self, head: Term, body: Vec<Term>) -> Result<(), EngineError> {
        head.pred()?;
        head.validate()?;
        let mut nvars = head.var_bound();
        for b in &body {
            b.pred()?;
            b.validate()?;
            nvars = nvars.max(b.var_bound());
        }
        self.rules.push(Clause { head, body, nvars });
        Ok(())
    }

    pub fn fact_count(&self, pred: PredId) -> usize {
        self.facts.get(&pred).map_or(0, |t| t.rows.len())
    }

    pub fn facts(&self, pred: PredId) -> impl Iterator<Item = &[Term]> + '_ {
        self.facts
            .get(&pred)
            .into_iter()
            .flat_map(|t| t.rows.iter().map(|r| &r[..]))
    }

    pub fn tabled(&self) -> impl Iterator<Item = (PredId, Option<&[Mode]>)> + '_ {
        self.tabled.iter().map(|(p, m)| (*p, m.as_deref()))
    }

    fn compile(&self) -> Result<Compiled, EngineError> {
        let mut c = Compiled {
            preds: Vec::new(),
            pred_ix: HashMap::new(),
            facts: Vec::new(),
            fact_ix: HashMap::new(),
        };
        for (p, m) in &self.tabled {
            c.pred_ix.insert(*p, c.preds.len());
            c.preds.push(TPred {
                id: *p,
                modes: m.clone(),
                clauses: Vec::new(),
            });
        }
        for p in &self.fact_order {
            let t = &self.facts[p];
            if let Some(&ix) = c.pred_ix.get(p) {
                for r in &t.rows {
                    let head = Term::from_sym(p.name, r.to_vec());
                    c.preds[ix].clauses.push(Arc::new(CClause {
                        head,
                        body: Vec::new(),
                        nvars: 0,
                    }));
                }
            } else {
                c.fact_ix.insert(*p, c.facts.len());
                c.facts.push(t.clone());
            }
        }
        for r in &self.rules {
            let hp = r.head.pred()?;
            let Some(&ix) = c.pred_ix.get(&hp) else {
                return Err(EngineError::Program(format!(
                    "rules are only supported for tabled predicates; declare `:- table {hp}.`"
                )));
            };
            let mut body = Vec::with_capacity(r.body.len());
            for b in &r.body {
                let bp = b.pred()?;
                let kind = if let Some(&t) = c.pred_ix.get(&bp) {
                    Lit::Tabled(t)
                } else if let Some(&f) = c.fact_ix.get(&bp) {
                    Lit::Facts(f)
                } else if let Some(bi) = Builtin::of(bp) {
                    Lit::Builtin(bi)
                } else if self.facts.contains_key(&bp) {
                    unreachable!()
                } else {
                    return Err(EngineError::Program(format!("undefined predicate {bp} in a rule for {hp}")));
                };
                body.push((b.clone(), kind));
            }
            c.preds[ix].clauses.push(Arc::new(CClause {
                head: r.head.clone(),
                body,
                nvars: r.nvars,
            }));
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Builtin {
    Is,
    Unify,
    NotUnify,
    Lt,
    Gt,
    Le,
    Ge,
    ArEq,
    ArNe,
    True,
    Fail,
}

impl Builtin {
    fn of(p: PredId) -> Option<Builtin> {
        let n = p.name.name();
        Some(match (&*n, p.arity) {
            ("is", 2) => Builtin::Is,
            ("=", 2) => Builtin::Unify,
            ("\\=", 2) => Builtin::NotUnify,
            ("<", 2) => Builtin::Lt,
            (">", 2) => Builtin::Gt,
            ("=<", 2) => Builtin::Le,
            (">=", 2) => Builtin::Ge,
            ("=:=", 2) => Builtin::ArEq,
            ("=\\=", 2) => Builtin::ArNe,
            ("true", 0) => Builtin::True,
            ("fail", 0) => Builtin::Fail,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Lit {
    Tabled(usize),
    Facts(usize),
    Builtin(Builtin),
}

struct CClause {
    head: Term,
    body: Vec<(Term, Lit)>,
    nvars: u32,
}

struct TPred {
    id: PredId,
    modes: Option<Vec<Mode>>,
    clauses: Vec<Arc<CClause>>,
}

struct Compiled {
    preds: Vec<TPred>,
    pred_ix: HashMap<PredId, usize>,
    facts: Vec<FactTable>,
    fact_ix: HashMap<PredId, usize>,
}

/// How a call's variables map onto its answer tokens: index variables
/// first, then output arguments of a mode-directed predicate, each with
/// its mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubstitutionArray {
    pub index: Vec<u32>,
    pub outputs: Vec<u32>,
    pub modes: Vec<Mode>,
}

impl SubstitutionArray {
    /// Layout for a canonical call pattern (variables `0..nvars`).
    pub fn of(pattern: &Term, nvars: u32, modes: Option<&[Mode]>) -> Result<Self, EngineError> {
        let aggregating = modes.is_some_and(|m| m.iter().any(|x| !matches!(x, Mode::Index | Mode::All)));
        if !aggregating {
            return Ok(SubstitutionArray {
                index: (0..nvars).collect(),
                outputs: Vec::new(),
                modes: Vec::new(),
            });
        }
        let modes = modes.unwrap();
        let args = pattern.args();
        let mut occ = vec![0u32; nvars as usize];
        fn count(t: &Term, occ: &mut [u32]) {
            match t {
                Term::Var(v) => occ[*v as usize] += 1,
                Term::Compound { args, .. } => args.iter().for_each(|a| count(a, occ)),
                _ => {}
            }
        }
        args.iter().for_each(|a| count(a, &mut occ));
        let mut outputs = Vec::new();
        let mut out_modes = Vec::new();
        for (a, m) in args.iter().zip(modes) {
            if matches!(m, Mode::Index | Mode::All) {
                continue;
            }
            match a {
                Term::Var(v) if occ[*v as usize] == 1 => {
                    outputs.push(*v);
                    out_modes.push(*m);
                }
                _ => {
                    return Err(EngineError::Program(format!(
                        "output arguments of a mode-directed call must be distinct free variables: {pattern}"
                    )))
                }
            }
        }
        let index = (0..nvars).filter(|v| !outputs.contains(v)).collect();
        Ok(SubstitutionArray {
            index,
            outputs,
            modes: out_modes,
        })
    }

    fn order(&self) -> impl Iterator<Item = u32> + '_ {
        self.index.iter().chain(self.outputs.iter()).copied()
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct ThreadStats {
    /// Distinct subgoals called.
    pub calls: u64,
    /// Table lookups (every tabled call).
    pub lookups: u64,
    pub unique: u64,
    pub repeated: u64,
    pub rounds: u64,
    pub completed: u64,
    /// Subgoals whose evaluation was dropped for a table completed elsewhere.
    pub abandoned: u64,
    pub mode_replaced: u64,
    pub mode_discarded: u64,
    pub answers: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalStats {
    pub calls: u64,
    pub lookups: u64,
    pub unique: u64,
    pub repeated: u64,
    /// Maximum over threads.
    pub rounds: u64,
    pub completed: u64,
    pub abandoned: u64,
    pub mode_replaced: u64,
    pub mode_discarded: u64,
    /// Answers of the query (thread 0).
    pub answers: u64,
    pub subgoal_trie: TrieStats,
    pub answer_trie: TrieStats,
}

impl EvalStats {
    fn from_threads(ts: &[ThreadStats]) -> Self {
        let mut s = EvalStats::default();
        for t in ts {
            s.calls += t.calls;
            s.lookups += t.lookups;
            s.unique += t.unique;
            s.repeated += t.repeated;
            s.rounds = s.rounds.max(t.rounds);
            s.completed += t.completed;
            s.abandoned += t.abandoned;
            s.mode_replaced += t.mode_replaced;
            s.mode_discarded += t.mode_discarded;
        }
        s.answers = ts.first().map_or(0, |t| t.answers);
        s
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// Answers of thread 0, as instances of the query.
    pub answers: Vec<Term>,
    /// Whether every thread ended with the same answer set.
    pub threads_agree: bool,
    pub stats: EvalStats,
    pub per_thread: Vec<ThreadStats>,
}

/// A compiled program bound to a table space.
pub struct Engine {
    prog: Compiled,
    space: TableSpace,
    preds: Vec<PredHandle>,
    cfg: EvalConfig,
}

impl Engine {
    pub fn new(program: &Program, cfg: EvalConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let prog = program.compile()?;
        let mut tcfg = TableSpaceConfig::new(cfg.design);
        tcfg.trie = cfg.trie.clone();
        tcfg.alloc = cfg.alloc.clone();
        tcfg.pas_discard = cfg.pas_discard;
        let space = TableSpace::new(tcfg)?;
        let mut heap = space.heap(0);
        let mut preds = Vec::with_capacity(prog.preds.len());
        for p in &prog.preds {
            preds.push(space.register(&mut heap, p.id, p.modes.clone())?);
        }
        drop(heap);
        Ok(Engine {
            prog,
            space,
            preds,
            cfg,
        })
    }

    pub fn space(&self) -> &TableSpace {
        &self.space
    }

    pub fn config(&self) -> &EvalConfig {
        &self.cfg
    }

    /// Evaluates `query` on every worker thread; tables stay in place.
    pub fn solve(&self, query: &Term) -> Result<Solution, EngineError> {
        let qp = query.pred()?;
        let slot = *self
            .prog
            .pred_ix
            .get(&qp)
            .ok_or_else(|| EngineError::Table(TableError::NotTabled(qp.to_string())))?;
        query.validate()?;
        let nt = self.cfg.threads;
        let results: Vec<Result<WorkerResult, EngineError>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..nt)
                .map(|t| {
                    std::thread::Builder::new()
                        .name(format!("tabling-worker-{t}"))
                        .stack_size(self.cfg.stack_size)
                        .spawn_scoped(sc, move || {
                            let mut w = Worker::new(self, t as u32);
                            w.run(slot, query)
                        })
                        .expect("spawn worker")
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(t, h)| h.join().unwrap_or(Err(EngineError::Worker(t))))
                .collect()
        });
        let mut per = Vec::with_capacity(nt);
        let mut sets = Vec::with_capacity(nt);
        for r in results {
            let r = r?;
            per.push(r.stats);
            sets.push(r.answers);
        }
        let mut stats = EvalStats::from_threads(&per);
        let (st, at) = self.space.trie_stats();
        stats.subgoal_trie = st;
        stats.answer_trie = at;
        let mut threads_agree = per.iter().all(|s| s.answers == per[0].answers);
        let mut answers = Vec::new();
        if self.cfg.collect_answers {
            let mut sorted: Vec<Vec<Term>> = sets
                .into_iter()
                .map(|mut s| {
                    s.sort_by_key(|t| t.to_string());
                    s
                })
                .collect();
            threads_agree &= sorted.iter().all(|s| *s == sorted[0]);
            answers = sorted.swap_remove(0);
        }
        Ok(Solution {
            answers,
            threads_agree,
            stats,
            per_thread: per,
        })
    }

    /// Frees all tables.
    pub fn abolish(&self) -> Result<(), EngineError> {
        let mut heap = self.space.heap(MAX_THREADS as u32 - 1);
        self.space.abolish(&mut heap)?;
        Ok(())
    }
}

/// Evaluates `query` under `cfg` and frees the tables afterwards.
pub fn solve(program: &Program, query: &Term, cfg: EvalConfig) -> Result<Solution, EngineError> {
    let e = Engine::new(program, cfg)?;
    let s = e.solve(query)?;
    e.abolish()?;
    Ok(s)
}

struct WorkerResult {
    stats: ThreadStats,
    answers: Vec<Term>,
}

#[derive(Clone, Default)]
struct Env {
    slots: Vec<Option<Term>>,
    trail: Vec<u32>,
}

impl Env {
    fn with_slots(n: usize) -> Self {
        Env {
            slots: vec![None; n],
            trail: Vec::new(),
        }
    }

    fn deref(&self, t: &Term) -> Term {
        let mut cur = t;
        loop {
            match cur {
                Term::Var(v) => match &self.slots[*v as usize] {
                    Some(b) => cur = b,
                    None => return cur.clone(),
                },
                _ => return cur.clone(),
            }
        }
    }

    fn resolve(&self, t: &Term) -> Term {
        match self.deref(t) {
            Term::Compound {
                functor,
                arity,
                args,
            } => Term::Compound {
                functor,
                arity,
                args: args.iter().map(|a| self.resolve(a)).collect(),
            },
            other => other,
        }
    }

    fn bind(&mut self, v: u32, t: Term) {
        self.slots[v as usize] = Some(t);
        self.trail.push(v);
    }

    fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let a = self.deref(a);
        let b = self.deref(b);
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x == y => true,
            (Term::Var(x), _) => {
                self.bind(*x, b);
                true
            }
            (_, Term::Var(y)) => {
                self.bind(*y, a);
                true
            }
            (Term::Int(x), Term::Int(y)) => x == y,
            (Term::Atom(x), Term::Atom(y)) => x == y,
            (
                Term::Compound {
                    functor: f,
                    arity: n,
                    args: xs,
                },
                Term::Compound {
                    functor: g,
                    arity: m,
                    args: ys,
                },
            ) => f == g && n == m && xs.iter().zip(ys.iter()).all(|(x, y)| self.unify(x, y)),
            _ => false,
        }
    }

    fn mark(&self) -> usize {
        self.trail.len()
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().unwrap();
            self.slots[v as usize] = None;
        }
    }

    fn eval(&self, t: &Term) -> Result<i64, EngineError> {
        match self.deref(t) {
            Term::Int(i) => Ok(i),
            Term::Var(_) => Err(EngineError::Instantiation(format!(
                "unbound variable in arithmetic: {}",
                self.resolve(t)
            ))),
            Term::Compound {
                functor, args, arity: 2, ..
            } => {
                let a = self.eval(&args[0])?;
                let b = self.eval(&args[1])?;
                let r = match &*functor.name() {
                    "+" => a.checked_add(b),
                    "-" => a.checked_sub(b),
                    "*" => a.checked_mul(b),
                    "//" if b != 0 => a.checked_div(b),
                    "mod" if b != 0 => a.checked_rem_euclid(b),
                    "min" => Some(a.min(b)),
                    "max" => Some(a.max(b)),
                    "//" | "mod" => return Err(EngineError::Type("division by zero".into())),
                    f => return Err(EngineError::Type(format!("unknown arithmetic operator {f}"))),
                };
                r.ok_or_else(|| EngineError::Type("integer overflow".into()))
            }
            other => Err(EngineError::Type(format!("not a number: {other}"))),
        }
    }
}

fn shift(t: &Term, off: u32) -> Term {
    match t {
        Term::Var(v) => Term::Var(v + off),
        Term::Compound {
            functor,
            arity,
            args,
        } => Term::Compound {
            functor: *functor,
            arity: *arity,
            args: args.iter().map(|a| shift(a, off)).collect(),
        },
        other => other.clone(),
    }
}

fn var_order(t: &Term, out: &mut Vec<u32>) {
    match t {
        Term::Var(v) => {
            if !out.contains(v) {
                out.push(*v)
            }
        }
        Term::Compound { args, .. } => args.iter().for_each(|a| var_order(a, out)),
        _ => {}
    }
}

fn max_var(ts: &[Term]) -> u32 {
    ts.iter().map(|t| t.var_bound()).max().unwrap_or(0)
}

struct Goal {
    handle: SubgoalHandle,
    pred: usize,
    key: SubgoalKey,
    subst: SubstitutionArray,
    complete: bool,
    generated: bool,
    consumers: Vec<u32>,
    callers: Vec<u32>,
}

struct Consumer {
    goal: u32,
    owner: u32,
    clause: Arc<CClause>,
    lit: usize,
    env: Vec<Option<Term>>,
    /// Environment slots receiving the answer values, in answer order.
    targets: Vec<u32>,
    cursor: AnswerCursor,
    dead: bool,
    queued: bool,
}

enum Task {
    Generate(u32),
    Resume(u32),
}

struct Worker<'a> {
    space: &'a TableSpace,
    prog: &'a Compiled,
    preds: &'a [PredHandle],
    cfg: &'a EvalConfig,
    heap: LocalHeap,
    goals: Vec<Goal>,
    by_key: HashMap<Vec<Token>, u32>,
    consumers: Vec<Consumer>,
    tasks: VecDeque<Task>,
    stats: ThreadStats,
    retired: Vec<SubgoalHandle>,
    rng: ChaCha8Rng,
}

impl<'a> Worker<'a> {
    fn new(e: &'a Engine, tid: u32) -> Self {
        Worker {
            space: &e.space,
            prog: &e.prog,
            preds: &e.preds,
            cfg: &e.cfg,
            heap: e.space.heap(tid),
            goals: Vec::new(),
            by_key: HashMap::new(),
            consumers: Vec::new(),
            tasks: VecDeque::new(),
            stats: ThreadStats::default(),
            retired: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(e.cfg.seed ^ tid as u64),
        }
    }

    fn run(&mut self, slot: usize, query: &Term) -> Result<WorkerResult, EngineError> {
        let _guard = self.space.attach();
        let root = self.call(slot, query)?;
        let shuffle = self.cfg.threads > 1;
        loop {
            self.stats.rounds += 1;
            while let Some(t) = self.pop() {
                if shuffle && self.rng.gen_ratio(1, 64) {
                    std::thread::yield_now();
                }
                match t {
                    Task::Generate(g) => self.generate(g)?,
                    Task::Resume(c) => {
                        self.consumers[c as usize].queued = false;
                        self.resume(c)?
                    }
                }
            }
            self.boundary()?;
            if self.goals[root as usize].complete {
                break;
            }
            let mut scheduled = 0;
            for c in 0..self.consumers.len() as u32 {
                let cs = &self.consumers[c as usize];
                if !cs.dead && !cs.queued && !self.goals[cs.owner as usize].complete && self.behind(c) {
                    self.schedule(c);
                    scheduled += 1;
                }
            }
            if scheduled == 0 {
                return Err(EngineError::Internal("evaluation stalled before completion".into()));
            }
        }
        let g = &self.goals[root as usize];
        let h = g.handle;
        let pattern = g.key.pattern();
        let order: Vec<u32> = g.subst.order().collect();
        let mut cur = AnswerCursor::Start;
        let mut answers = Vec::new();
        let mut n = 0u64;
        while let Some(leaf) = self.space.next_answer(&h, &mut cur) {
            n += 1;
            if self.cfg.collect_answers {
                let vals = decode_subst(&leaf_tokens(leaf), order.len() as u32)?;
                let mut subst = vec![Term::Int(0); order.len()];
                for (v, val) in order.iter().zip(vals) {
                    subst[*v as usize] = val;
                }
                answers.push(instantiate(&pattern, &subst));
            }
        }
        self.stats.answers = n;
        for i in 0..self.goals.len() {
            let h = self.goals[i].handle;
            self.space.release_private(&mut self.heap, &h)?;
        }
        for h in std::mem::take(&mut self.retired) {
            self.space.release_private(&mut self.heap, &h)?;
        }
        Ok(WorkerResult {
            stats: std::mem::take(&mut self.stats),
            answers,
        })
    }

    fn pop(&mut self) -> Option<Task> {
        match self.cfg.scheduling {
            Scheduling::Local => self.tasks.pop_front(),
            Scheduling::Batched => self.tasks.pop_back(),
        }
    }

    fn schedule(&mut self, c: u32) {
        let cs = &mut self.consumers[c as usize];
        if !cs.queued {
            cs.queued = true;
            self.tasks.push_back(Task::Resume(c));
        }
    }

    fn behind(&self, c: u32) -> bool {
        let cs = &self.consumers[c as usize];
        let mut cur = cs.cursor;
        self.space
            .next_answer(&self.goals[cs.goal as usize].handle, &mut cur)
            .is_some()
    }

    /// Finds or creates this thread's goal record for a tabled call.
    fn call(&mut self, slot: usize, call: &Term) -> Result<u32, EngineError> {
        let key = canonicalize(call)?;
        self.stats.lookups += 1;
        let lk = self.space.lookup(&mut self.heap, self.preds[slot], &key)?;
        if let Some(&g) = self.by_key.get(&key.tokens) {
            return Ok(g);
        }
        let subst = SubstitutionArray::of(&key.pattern(), key.nvars, self.prog.preds[slot].modes.as_deref())?;
        let g = self.goals.len() as u32;
        let complete = lk.status == Status::Complete;
        self.goals.push(Goal {
            handle: lk.handle,
            pred: slot,
            key: key.clone(),
            subst,
            complete,
            generated: complete,
            consumers: Vec::new(),
            callers: Vec::new(),
        });
        self.by_key.insert(key.tokens, g);
        self.stats.calls += 1;
        if !complete {
            self.tasks.push_back(Task::Generate(g));
        }
        Ok(g)
    }

    fn generate(&mut self, g: u32) -> Result<(), EngineError> {
        let goal = &mut self.goals[g as usize];
        if goal.complete || goal.generated {
            return Ok(());
        }
        goal.generated = true;
        let pattern = goal.key.pattern();
        let prog = self.prog;
        for cl in &prog.preds[goal.pred].clauses {
            if self.goals[g as usize].complete {
                break;
            }
            let k = self.goals[g as usize].key.nvars;
            let mut env = Env::with_slots((cl.nvars + k) as usize);
            if env.unify(&cl.head, &shift(&pattern, cl.nvars)) {
                self.exec(g, cl, 0, &mut env)?;
            }
        }
        Ok(())
    }

    fn exec(&mut self, owner: u32, cl: &Arc<CClause>, i: usize, env: &mut Env) -> Result<(), EngineError> {
        if self.goals[owner as usize].complete {
            return Ok(());
        }
        if i == cl.body.len() {
            return self.emit(owner, cl, env);
        }
        let (lit, kind) = &cl.body[i];
        match *kind {
            Lit::Builtin(b) => {
                let mark = env.mark();
                if self.builtin(b, lit, env)? {
                    self.exec(owner, cl, i + 1, env)?;
                }
                env.undo(mark);
            }
            Lit::Facts(f) => {
                let prog = self.prog;
                let table = &prog.facts[f];
                let args = lit.args();
                let first = args.first().map(|a| env.deref(a));
                let rows: Box<dyn Iterator<Item = &Arc<[Term]>>> =
                    match first.as_ref().and_then(index_word) {
                        Some(w) => match table.index.get(&w) {
                            Some(ix) => Box::new(ix.iter().map(|&r| &table.rows[r as usize])),
                            None => return Ok(()),
                        },
                        None => Box::new(table.rows.iter()),
                    };
                for row in rows {
                    let mark = env.mark();
                    if args.iter().zip(row.iter()).all(|(a, b)| env.unify(a, b)) {
                        self.exec(owner, cl, i + 1, env)?;
                    }
                    env.undo(mark);
                    if self.goals[owner as usize].complete {
                        break;
                    }
                }
            }
            Lit::Tabled(slot) => {
                let call = env.resolve(lit);
                let g = self.call(slot, &call)?;
                let mut slots = Vec::new();
                var_order(&call, &mut slots);
                let targets = self.goals[g as usize]
                    .subst
                    .order()
                    .map(|v| slots[v as usize])
                    .collect();
                let c = self.consumers.len() as u32;
                self.consumers.push(Consumer {
                    goal: g,
                    owner,
                    clause: cl.clone(),
                    lit: i,
                    env: env.slots.clone(),
                    targets,
                    cursor: AnswerCursor::Start,
                    dead: false,
                    queued: false,
                });
                self.goals[g as usize].consumers.push(c);
                if !self.goals[g as usize].callers.contains(&owner) {
                    self.goals[g as usize].callers.push(owner);
                }
                self.resume(c)?;
            }
        }
        Ok(())
    }

    fn builtin(&mut self, b: Builtin, lit: &Term, env: &mut Env) -> Result<bool, EngineError> {
        let a = lit.args();
        Ok(match b {
            Builtin::True => true,
            Builtin::Fail => false,
            Builtin::Is => {
                let v = env.eval(&a[1])?;
                env.unify(&a[0], &Term::Int(v))
            }
            Builtin::Unify => env.unify(&a[0], &a[1]),
            Builtin::NotUnify => {
                let m = env.mark();
                let r = env.unify(&a[0], &a[1]);
                env.undo(m);
                !r
            }
            Builtin::Lt => env.eval(&a[0])? < env.eval(&a[1])?,
            Builtin::Gt => env.eval(&a[0])? > env.eval(&a[1])?,
            Builtin::Le => env.eval(&a[0])? <= env.eval(&a[1])?,
            Builtin::Ge => env.eval(&a[0])? >= env.eval(&a[1])?,
            Builtin::ArEq => env.eval(&a[0])? == env.eval(&a[1])?,
            Builtin::ArNe => env.eval(&a[0])? != env.eval(&a[1])?,
        })
    }

    /// Feeds every not yet consumed answer of the callee to consumer `c`.
    fn resume(&mut self, c: u32) -> Result<(), EngineError> {
        let (goal, owner, cl, lit, targets) = {
            let cs = &self.consumers[c as usize];
            if cs.dead {
                return Ok(());
            }
            (cs.goal, cs.owner, cs.clause.clone(), cs.lit, cs.targets.clone())
        };
        let mut env = Env {
            slots: self.consumers[c as usize].env.clone(),
            trail: Vec::new(),
        };
        let base = env.slots.len();
        loop {
            if self.consumers[c as usize].dead || self.goals[owner as usize].complete {
                break;
            }
            let h = self.goals[goal as usize].handle;
            let mut cur = self.consumers[c as usize].cursor;
            let Some(leaf) = self.space.next_answer(&h, &mut cur) else {
                break;
            };
            self.consumers[c as usize].cursor = cur;
            let vals = decode_subst(&leaf_tokens(leaf), targets.len() as u32)?;
            let fresh = max_var(&vals);
            env.slots.resize(base + fresh as usize, None);
            let mark = env.mark();
            let ok = targets
                .iter()
                .zip(&vals)
                .all(|(t, v)| env.unify(&Term::Var(*t), &shift(v, base as u32)));
            if ok {
                self.exec(owner, &cl, lit + 1, &mut env)?;
            }
            env.undo(mark);
            env.slots.truncate(base);
        }
        Ok(())
    }

    fn emit(&mut self, owner: u32, cl: &CClause, env: &Env) -> Result<(), EngineError> {
        let g = &self.goals[owner as usize];
        let h = g.handle;
        let vals: Vec<Term> = g
            .subst
            .order()
            .map(|v| env.resolve(&Term::Var(cl.nvars + v)))
            .collect();
        let new = if g.subst.outputs.is_empty() {
            let toks = subst_tokens(&vals)?;
            match self.space.record_answer(&mut self.heap, &h, &toks)?.0 {
                AnswerOutcome::New => true,
                AnswerOutcome::Repeated => false,
            }
        } else {
            if let Some(v) = vals.iter().find(|v| !v.is_ground()) {
                return Err(EngineError::Instantiation(format!(
                    "mode-directed answers must be ground, got {v}"
                )));
            }
            let ni = g.subst.index.len();
            let index = if ni == 0 {
                Vec::new()
            } else {
                subst_tokens(&vals[..ni])?
            };
            let modes = g.subst.modes.clone();
            let (o, _) = self
                .space
                .mode_insert(&mut self.heap, &h, &index, &vals[ni..], &modes)
                .map_err(|e| match e {
                    TableError::Type(m) => EngineError::Type(m),
                    other => other.into(),
                })?;
            match o {
                ModeOutcome::Inserted => true,
                ModeOutcome::Replaced => {
                    self.stats.mode_replaced += 1;
                    true
                }
                ModeOutcome::Discarded => {
                    self.stats.mode_discarded += 1;
                    false
                }
            }
        };
        if new {
            self.stats.unique += 1;
            if self.cfg.scheduling == Scheduling::Batched {
                if let Some(&first) = self.goals[owner as usize].consumers.first() {
                    self.schedule(first);
                }
            }
        } else {
            self.stats.repeated += 1;
        }
        Ok(())
    }

    /// Round boundary: adopt tables completed elsewhere, then complete
    /// every goal that can no longer gain answers.
    fn boundary(&mut self) -> Result<(), EngineError> {
        let design = self.space.design();
        for g in 0..self.goals.len() {
            if self.goals[g].complete {
                continue;
            }
            let h = self.goals[g].handle;
            match design {
                Design::Pas => {
                    if let Some(p) = self.space.published(&h) {
                        if p.frame_id() != h.frame_id() {
                            self.abandon(g, Some(p))?;
                        }
                    }
                }
                Design::Fs | Design::Pac => {
                    if self.space.is_complete(&h) {
                        self.abandon(g, None)?;
                    }
                }
                _ => {}
            }
        }
        let n = self.goals.len();
        let mut pending = vec![false; n];
        let mut stack = Vec::new();
        for (g, goal) in self.goals.iter().enumerate() {
            if !goal.complete && !goal.generated {
                pending[g] = true;
                stack.push(g);
            }
        }
        for c in 0..self.consumers.len() as u32 {
            let cs = &self.consumers[c as usize];
            let o = cs.owner as usize;
            if !cs.dead && !self.goals[o].complete && !pending[o] && self.behind(c) {
                pending[o] = true;
                stack.push(o);
            }
        }
        while let Some(g) = stack.pop() {
            for &caller in &self.goals[g].callers {
                let c = caller as usize;
                if !pending[c] && !self.goals[c].complete {
                    pending[c] = true;
                    stack.push(c);
                }
            }
        }
        for (g, p) in pending.iter().enumerate() {
            if !*p && !self.goals[g].complete {
                let h = self.goals[g].handle;
                self.space.complete(&mut self.heap, &h)?;
                self.goals[g].complete = true;
                self.stats.completed += 1;
            }
        }
        Ok(())
    }

    /// Drops this thread's evaluation of `g` in favour of a completed table.
    fn abandon(&mut self, g: usize, published: Option<SubgoalHandle>) -> Result<(), EngineError> {
        let old = self.goals[g].handle;
        let reset = match published {
            Some(p) => {
                self.goals[g].handle = p;
                self.retired.push(old);
                true
            }
            None => {
                self.space.complete(&mut self.heap, &old)?;
                self.space.design() == Design::Pac
            }
        };
        self.goals[g].complete = true;
        self.stats.abandoned += 1;
        if reset {
            for &c in &self.goals[g].consumers {
                self.consumers[c as usize].cursor = AnswerCursor::Start;
            }
        }
        for c in self.consumers.iter_mut() {
            if c.owner as usize == g {
                c.dead = true;
            }
        }
        Ok(())
    }
}
