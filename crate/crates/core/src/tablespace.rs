//! The table space: table entries, subgoal tries, subgoal frames and answer
//! tries, laid out according to one of five sharing designs.
//!
//! | design | subgoal trie | subgoal frame | answer trie |
//! |--------|--------------|---------------|-------------|
//! | NS     | per thread   | per thread    | per thread  |
//! | SS     | shared       | per thread    | per thread  |
//! | FS     | shared       | split: shared entry + per-thread frame | shared |
//! | PAS    | shared       | per thread, first completed one published | per thread, published with its frame |
//! | PAC    | shared       | split, as FS  | shared, plus per-thread answer chains |
//!
//! Per-thread structures hang off a bucket array indexed by thread id: eight
//! direct cells plus lazily allocated groups of 32 cells.
//!
//! Lifecycle rule: nothing reachable by another thread is freed while workers
//! run. Private leftovers (invalidated answers, PAC answer chains, superseded
//! PAS frames) are released by their owner through
//! [`TableSpace::release_private`] once it holds no cursors into them; the
//! rest goes in [`TableSpace::abolish`].

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ptr;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering::*};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pagealloc::{
    AllocConfig, AllocError, Block, HeapStats, LocalHeap, PageAllocator, StructType, TypeSpec,
};
use crate::term::{decode_subst, subst_tokens, PredId, SubgoalKey, Term, TermError, Token};
use crate::trie::{
    leaf_tokens, mix64, NodeRef, TrieConfig, TrieSpace, TrieStats, NODE_SIZE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Reference design of the memory model only (or-parallel sharing).
    Cs,
    Ns,
    Ss,
    Fs,
    Pas,
    Pac,
}

impl Design {
    pub const RUNTIME: [Design; 5] = [Design::Ns, Design::Ss, Design::Fs, Design::Pas, Design::Pac];

    pub fn name(self) -> &'static str {
        match self {
            Design::Cs => "cs",
            Design::Ns => "ns",
            Design::Ss => "ss",
            Design::Fs => "fs",
            Design::Pas => "pas",
            Design::Pac => "pac",
        }
    }

    fn private_answers(self) -> bool {
        matches!(self, Design::Ns | Design::Ss | Design::Pas)
    }

    pub fn supports_modes(self) -> bool {
        self.private_answers()
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cs" => Design::Cs,
            "ns" => Design::Ns,
            "ss" => Design::Ss,
            "fs" => Design::Fs,
            "pas" => Design::Pas,
            "pac" => Design::Pac,
            _ => return Err(format!("unknown design {s}")),
        })
    }
}

/// Per-argument mode of a mode-directed tabled predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Index,
    Max,
    Min,
    First,
    Last,
    Sum,
    All,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "index" => Mode::Index,
            "max" => Mode::Max,
            "min" => Mode::Min,
            "first" => Mode::First,
            "last" => Mode::Last,
            "sum" => Mode::Sum,
            "all" => Mode::All,
            _ => return Err(format!("unknown mode {s}")),
        })
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error("predicate {0} is not tabled")]
    NotTabled(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("type error: {0}")]
    Type(String),
}

pub const MAX_THREADS: usize = 1024;
const DIRECT_CELLS: usize = 8;
const GROUP_CELLS: usize = 32;
const GROUPS: usize = 32;

const COMPLETE: usize = 1;
const LATCH: usize = 2;
const INVALID: usize = 1;
const LINKED: usize = 2;
const FLAGS: usize = INVALID | LINKED;
const CHAIN_HASH_AFTER: usize = 8;
const CHAIN_W: u32 = 3;

#[repr(C)]
struct TableEntry {
    pred: AtomicUsize,
    index: AtomicUsize,
    /// Subgoal trie root, or (NS) the bucket array of private roots.
    root: AtomicUsize,
}

#[repr(C)]
struct BucketArray {
    direct: [AtomicUsize; DIRECT_CELLS],
    groups: [AtomicUsize; GROUPS],
}

#[repr(C)]
struct BaGroup {
    cells: [AtomicUsize; GROUP_CELLS],
}

/// Full private frame (NS, SS, PAS).
#[repr(C)]
struct SubgoalFrame {
    answer_root: AtomicUsize,
    first: AtomicUsize,
    last: AtomicUsize,
    state: AtomicUsize,
    /// PAS frame list link.
    next: AtomicUsize,
    owner: AtomicUsize,
    leaf: AtomicUsize,
    invalid: AtomicUsize,
    answers: AtomicUsize,
}

/// Shared part of a split frame (FS, PAC).
#[repr(C)]
struct SubgoalEntry {
    answer_root: AtomicUsize,
    first: AtomicUsize,
    last: AtomicUsize,
    state: AtomicUsize,
    ba: AtomicUsize,
}

/// Private part of a split frame plus the back pointer to its entry.
#[repr(C)]
struct SplitFrame {
    /// Complete flag in bit 0, private chain length above bit 8.
    state: AtomicUsize,
    chain_head: AtomicUsize,
    chain_tail: AtomicUsize,
    chain_hash: AtomicUsize,
    bp: AtomicUsize,
}

#[repr(C)]
struct ChainNode {
    leaf: AtomicUsize,
    next: AtomicUsize,
    hash_next: AtomicUsize,
}

#[repr(C)]
struct ChainLevel {
    depth: AtomicUsize,
    buckets: [AtomicUsize; 1 << CHAIN_W],
}

/// Structure types registered with the allocator, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    TableEntry,
    BucketArray,
    BucketGroup,
    SubgoalNode,
    SubgoalLevel,
    AnswerNode,
    AnswerLevel,
    SubgoalFrame,
    SubgoalEntry,
    SplitFrame,
    ChainNode,
    ChainLevel,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::TableEntry,
        Kind::BucketArray,
        Kind::BucketGroup,
        Kind::SubgoalNode,
        Kind::SubgoalLevel,
        Kind::AnswerNode,
        Kind::AnswerLevel,
        Kind::SubgoalFrame,
        Kind::SubgoalEntry,
        Kind::SplitFrame,
        Kind::ChainNode,
        Kind::ChainLevel,
    ];

    pub fn ty(self) -> StructType {
        StructType(self as u16)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::TableEntry => "table_entry",
            Kind::BucketArray => "bucket_array",
            Kind::BucketGroup => "bucket_group",
            Kind::SubgoalNode => "subgoal_trie_node",
            Kind::SubgoalLevel => "subgoal_hash_level",
            Kind::AnswerNode => "answer_trie_node",
            Kind::AnswerLevel => "answer_hash_level",
            Kind::SubgoalFrame => "subgoal_frame",
            Kind::SubgoalEntry => "subgoal_entry",
            Kind::SplitFrame => "split_frame",
            Kind::ChainNode => "answer_chain_node",
            Kind::ChainLevel => "answer_chain_level",
        }
    }
}

/// Block sizes in bytes, as used by the memory model.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct StructSizes {
    pub te: u64,
    pub ba: u64,
    pub ba_group: u64,
    pub sf: u64,
    pub se_fs: u64,
    pub sf_fs: u64,
    pub bp: u64,
    pub node: u64,
}

pub const SIZES: StructSizes = StructSizes {
    te: std::mem::size_of::<TableEntry>() as u64,
    ba: std::mem::size_of::<BucketArray>() as u64,
    ba_group: std::mem::size_of::<BaGroup>() as u64,
    sf: std::mem::size_of::<SubgoalFrame>() as u64,
    se_fs: std::mem::size_of::<SubgoalEntry>() as u64,
    sf_fs: (std::mem::size_of::<SplitFrame>() - 8) as u64,
    bp: 8,
    node: NODE_SIZE as u64,
};

impl StructSizes {
    /// Bucket array bytes once `nt` threads have claimed a cell.
    pub fn ba_for(&self, nt: u64) -> u64 {
        let extra = nt.saturating_sub(DIRECT_CELLS as u64);
        self.ba + extra.div_ceil(GROUP_CELLS as u64) * self.ba_group
    }
}

#[derive(Clone, Debug)]
pub struct TableSpaceConfig {
    pub design: Design,
    pub trie: TrieConfig,
    pub alloc: AllocConfig,
    /// PAS: a thread completing after another published frees its own copy.
    pub pas_discard: bool,
}

impl TableSpaceConfig {
    pub fn new(design: Design) -> Self {
        TableSpaceConfig {
            design,
            trie: TrieConfig::default(),
            alloc: AllocConfig::default(),
            pas_discard: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AnswerOutcome {
    New,
    Repeated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ModeOutcome {
    /// First answer for its index prefix.
    Inserted,
    /// Improved on an existing answer, which was invalidated.
    Replaced,
    /// Not better than the existing answer.
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// A frame was created for the caller; it must evaluate the subgoal.
    New,
    /// The caller already has an incomplete frame for it.
    Incomplete,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompleteOutcome {
    Completed,
    /// PAS: this frame became the public one.
    Published,
    /// PAS: another thread had already published; this frame is superseded.
    Superseded,
}

/// Registered tabled predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredHandle {
    pub index: u32,
    te: usize,
}

/// Opaque reference to the calling thread's view of a subgoal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubgoalHandle {
    pred: u32,
    leaf: usize,
    frame: usize,
    se: usize,
}

unsafe impl Send for SubgoalHandle {}

impl SubgoalHandle {
    pub fn pred_index(&self) -> u32 {
        self.pred
    }

    /// Identity of the frame this handle reads from.
    pub fn frame_id(&self) -> usize {
        self.frame
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lookup {
    pub handle: SubgoalHandle,
    pub status: Status,
}

/// Position of a consumer in an answer list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnswerCursor {
    #[default]
    Start,
    Leaf(usize),
    Chain(usize),
}

struct PredEntry {
    pred: PredId,
    modes: Option<Vec<Mode>>,
    te: usize,
}

pub struct TableSpace {
    cfg: TableSpaceConfig,
    alloc: Arc<PageAllocator>,
    st: TrieSpace,
    at: TrieSpace,
    preds: RwLock<Vec<PredEntry>>,
    by_id: RwLock<HashMap<PredId, u32>>,
    active: AtomicUsize,
    abolished: AtomicBool,
}

/// Keeps [`TableSpace::abolish`] out while a worker is running.
pub struct WorkerGuard<'a> {
    space: &'a TableSpace,
}

impl Drop for WorkerGuard<'_> {
    fn drop(&mut self) {
        self.space.active.fetch_sub(1, AcqRel);
    }
}

#[inline]
fn at<'a, T>(addr: usize) -> &'a T {
    unsafe { &*(addr as *const T) }
}

fn kind_specs(trie: &TrieConfig) -> Vec<TypeSpec> {
    Kind::ALL
        .iter()
        .map(|k| TypeSpec {
            name: k.name().to_string(),
            block_size: match k {
                Kind::TableEntry => SIZES.te as usize,
                Kind::BucketArray => SIZES.ba as usize,
                Kind::BucketGroup => SIZES.ba_group as usize,
                Kind::SubgoalNode | Kind::AnswerNode => NODE_SIZE,
                Kind::SubgoalLevel | Kind::AnswerLevel => trie.level_block_size(),
                Kind::SubgoalFrame => SIZES.sf as usize,
                Kind::SubgoalEntry => SIZES.se_fs as usize,
                Kind::SplitFrame => std::mem::size_of::<SplitFrame>(),
                Kind::ChainNode => std::mem::size_of::<ChainNode>(),
                Kind::ChainLevel => std::mem::size_of::<ChainLevel>(),
            },
        })
        .collect()
}

/// Compares terms in the standard order (numbers < atoms < compounds).
pub fn term_cmp(a: &Term, b: &Term) -> CmpOrdering {
    fn rank(t: &Term) -> u8 {
        match t {
            Term::Var(_) => 0,
            Term::Int(_) => 1,
            Term::Atom(_) => 2,
            Term::Compound { .. } => 3,
        }
    }
    match (a, b) {
        (Term::Int(x), Term::Int(y)) => x.cmp(y),
        (Term::Var(x), Term::Var(y)) => x.cmp(y),
        (Term::Atom(x), Term::Atom(y)) => x.name().cmp(&y.name()),
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
        ) => n
            .cmp(m)
            .then_with(|| f.name().cmp(&g.name()))
            .then_with(|| {
                xs.iter()
                    .zip(ys.iter())
                    .map(|(x, y)| term_cmp(x, y))
                    .find(|o| *o != CmpOrdering::Equal)
                    .unwrap_or(CmpOrdering::Equal)
            }),
        _ => rank(a).cmp(&rank(b)),
    }
}

impl TableSpace {
    pub fn new(cfg: TableSpaceConfig) -> Result<Self, TableError> {
        if cfg.design == Design::Cs {
            return Err(TableError::Config(
                "the CS design needs an or-parallel engine and is only available in the memory model"
                    .into(),
            ));
        }
        let alloc = PageAllocator::new(cfg.alloc.clone(), &kind_specs(&cfg.trie))?;
        Ok(TableSpace {
            st: TrieSpace::new(cfg.trie.clone(), Kind::SubgoalNode.ty(), Kind::SubgoalLevel.ty()),
            at: TrieSpace::new(cfg.trie.clone(), Kind::AnswerNode.ty(), Kind::AnswerLevel.ty()),
            alloc,
            cfg,
            preds: RwLock::new(Vec::new()),
            by_id: RwLock::new(HashMap::new()),
            active: AtomicUsize::new(0),
            abolished: AtomicBool::new(false),
        })
    }

    pub fn design(&self) -> Design {
        self.cfg.design
    }

    pub fn config(&self) -> &TableSpaceConfig {
        &self.cfg
    }

    pub fn allocator(&self) -> &Arc<PageAllocator> {
        &self.alloc
    }

    pub fn heap(&self, tid: u32) -> LocalHeap {
        self.alloc.local_heap(tid)
    }

    pub fn heap_stats(&self) -> HeapStats {
        self.alloc.heap_stats()
    }

    pub fn answer_tries(&self) -> &TrieSpace {
        &self.at
    }

    pub fn attach(&self) -> WorkerGuard<'_> {
        self.active.fetch_add(1, AcqRel);
        WorkerGuard { space: self }
    }

    fn alloc_zeroed(&self, heap: &mut LocalHeap, k: Kind) -> Result<usize, AllocError> {
        let b = heap.alloc_block(k.ty())?;
        unsafe { ptr::write_bytes(b.as_ptr(), 0, self.alloc.block_size(k.ty())) };
        Ok(b.addr())
    }

    fn free(&self, heap: &mut LocalHeap, k: Kind, addr: usize) -> Result<(), AllocError> {
        heap.free_block(k.ty(), unsafe { Block::from_raw(addr as *mut u8) })
    }

    /// Registers a tabled predicate (before workers start).
    pub fn register(
        &self,
        heap: &mut LocalHeap,
        pred: PredId,
        modes: Option<Vec<Mode>>,
    ) -> Result<PredHandle, TableError> {
        if let Some(h) = self.pred_handle(pred) {
            return Ok(h);
        }
        if let Some(m) = &modes {
            if m.len() != pred.arity as usize {
                return Err(TableError::Config(format!("mode list of {pred} has wrong length")));
            }
            if m.iter().any(|x| *x != Mode::Index && *x != Mode::All) && !self.cfg.design.supports_modes() {
                return Err(TableError::Unsupported(format!(
                    "mode-directed tabling needs a design with private answer tries (ns, ss, pas), not {}",
                    self.cfg.design
                )));
            }
        }
        let te = self.alloc_zeroed(heap, Kind::TableEntry)?;
        let mut preds = self.preds.write();
        let index = preds.len() as u32;
        let e: &TableEntry = at(te);
        e.pred.store(((pred.name.index() as usize) << 16) | pred.arity as usize, Relaxed);
        e.index.store(index as usize, Relaxed);
        if self.cfg.design == Design::Ns {
            let ba = self.alloc_zeroed(heap, Kind::BucketArray)?;
            e.root.store(ba, Release);
        }
        preds.push(PredEntry { pred, modes, te });
        self.by_id.write().insert(pred, index);
        self.abolished.store(false, Relaxed);
        Ok(PredHandle { index, te })
    }

    pub fn pred_handle(&self, pred: PredId) -> Option<PredHandle> {
        let i = *self.by_id.read().get(&pred)?;
        let te = self.preds.read()[i as usize].te;
        Some(PredHandle { index: i, te })
    }

    pub fn modes(&self, p: PredHandle) -> Option<Vec<Mode>> {
        self.preds.read()[p.index as usize].modes.clone()
    }

    pub fn pred_id(&self, p: PredHandle) -> PredId {
        self.preds.read()[p.index as usize].pred
    }

    fn cas_init(
        &self,
        heap: &mut LocalHeap,
        slot: &AtomicUsize,
        make: impl FnOnce(&Self, &mut LocalHeap) -> Result<usize, AllocError>,
        destroy: impl FnOnce(&Self, &mut LocalHeap, usize) -> Result<(), AllocError>,
    ) -> Result<(usize, bool), AllocError> {
        let v = slot.load(Acquire);
        if v != 0 {
            return Ok((v, false));
        }
        let n = make(self, heap)?;
        match slot.compare_exchange(0, n, AcqRel, Acquire) {
            Ok(_) => Ok((n, true)),
            Err(a) => {
                destroy(self, heap, n)?;
                Ok((a, false))
            }
        }
    }

    fn shared_root(&self, heap: &mut LocalHeap, te: usize) -> Result<NodeRef, AllocError> {
        let e: &TableEntry = at(te);
        let (r, _) = self.cas_init(
            heap,
            &e.root,
            |s, h| s.st.new_root(h).map(|n| n.addr()),
            |s, h, a| s.st.free_node(h, unsafe { NodeRef::from_addr(a) }),
        )?;
        Ok(unsafe { NodeRef::from_addr(r) })
    }

    fn ba_cell<'a>(
        &self,
        heap: &mut LocalHeap,
        ba: usize,
        tid: u32,
    ) -> Result<&'a AtomicUsize, TableError> {
        let k = tid as usize;
        let b: &BucketArray = at(ba);
        if k < DIRECT_CELLS {
            return Ok(&b.direct[k]);
        }
        let g = (k - DIRECT_CELLS) / GROUP_CELLS;
        if g >= GROUPS || k >= MAX_THREADS {
            return Err(TableError::Config(format!(
                "thread id {tid} exceeds the {MAX_THREADS}-thread ceiling"
            )));
        }
        let (grp, _) = self.cas_init(
            heap,
            &b.groups[g],
            |s, h| s.alloc_zeroed(h, Kind::BucketGroup),
            |s, h, a| s.free(h, Kind::BucketGroup, a),
        )?;
        let grp: &BaGroup = at(grp);
        Ok(&grp.cells[(k - DIRECT_CELLS) % GROUP_CELLS])
    }

    fn ba_values(ba: usize) -> Vec<usize> {
        let b: &BucketArray = at(ba);
        let mut out: Vec<usize> = b
            .direct
            .iter()
            .map(|c| c.load(Acquire))
            .filter(|&v| v != 0)
            .collect();
        for g in &b.groups {
            let gv = g.load(Acquire);
            if gv != 0 {
                let grp: &BaGroup = at(gv);
                out.extend(grp.cells.iter().map(|c| c.load(Acquire)).filter(|&v| v != 0));
            }
        }
        out
    }

    fn ba_groups(ba: usize) -> Vec<usize> {
        let b: &BucketArray = at(ba);
        b.groups.iter().map(|g| g.load(Acquire)).filter(|&v| v != 0).collect()
    }

    fn free_ba(&self, heap: &mut LocalHeap, ba: usize) -> Result<(), AllocError> {
        for g in Self::ba_groups(ba) {
            self.free(heap, Kind::BucketGroup, g)?;
        }
        self.free(heap, Kind::BucketArray, ba)
    }

    fn new_frame(&self, heap: &mut LocalHeap, leaf: usize) -> Result<usize, AllocError> {
        let f = self.alloc_zeroed(heap, Kind::SubgoalFrame)?;
        let root = self.at.new_root(heap)?;
        let fr: &SubgoalFrame = at(f);
        fr.answer_root.store(root.addr(), Relaxed);
        fr.owner.store(heap.tid() as usize, Relaxed);
        fr.leaf.store(leaf, Relaxed);
        Ok(f)
    }

    fn new_entry(&self, heap: &mut LocalHeap) -> Result<usize, AllocError> {
        let s = self.alloc_zeroed(heap, Kind::SubgoalEntry)?;
        let root = self.at.new_root(heap)?;
        let ba = self.alloc_zeroed(heap, Kind::BucketArray)?;
        let se: &SubgoalEntry = at(s);
        se.answer_root.store(root.addr(), Relaxed);
        se.ba.store(ba, Relaxed);
        Ok(s)
    }

    fn destroy_entry(&self, heap: &mut LocalHeap, s: usize) -> Result<(), AllocError> {
        let se: &SubgoalEntry = at(s);
        self.at
            .free_node(heap, unsafe { NodeRef::from_addr(se.answer_root.load(Relaxed)) })?;
        self.free_ba(heap, se.ba.load(Relaxed))?;
        self.free(heap, Kind::SubgoalEntry, s)
    }

    /// Finds or creates the caller's view of the subgoal `key`.
    pub fn lookup(
        &self,
        heap: &mut LocalHeap,
        p: PredHandle,
        key: &SubgoalKey,
    ) -> Result<Lookup, TableError> {
        let tid = heap.tid();
        if tid as usize >= MAX_THREADS {
            return Err(TableError::Config(format!("thread id {tid} out of range")));
        }
        let toks = key.trie_tokens();
        let handle = |leaf: usize, frame: usize, se: usize| SubgoalHandle {
            pred: p.index,
            leaf,
            frame,
            se,
        };
        match self.cfg.design {
            Design::Cs => unreachable!(),
            Design::Ns => {
                let e: &TableEntry = at(p.te);
                let cell = self.ba_cell(heap, e.root.load(Acquire), tid)?;
                let mut root = cell.load(Acquire);
                if root == 0 {
                    root = self.st.new_root(heap)?.addr();
                    cell.store(root, Release);
                }
                let (leaf, _) = self
                    .st
                    .check_insert(heap, unsafe { NodeRef::from_addr(root) }, toks)?;
                let mut f = leaf.aux().load(Acquire);
                let status = if f == 0 {
                    f = self.new_frame(heap, leaf.addr())?;
                    leaf.aux().store(f, Release);
                    Status::New
                } else {
                    frame_status(at::<SubgoalFrame>(f).state.load(Acquire))
                };
                Ok(Lookup {
                    handle: handle(leaf.addr(), f, 0),
                    status,
                })
            }
            Design::Ss => {
                let root = self.shared_root(heap, p.te)?;
                let (leaf, _) = self.st.check_insert(heap, root, toks)?;
                let (ba, _) = self.cas_init(
                    heap,
                    leaf.aux(),
                    |s, h| s.alloc_zeroed(h, Kind::BucketArray),
                    |s, h, a| s.free(h, Kind::BucketArray, a),
                )?;
                let cell = self.ba_cell(heap, ba, tid)?;
                let mut f = cell.load(Acquire);
                let status = if f == 0 {
                    f = self.new_frame(heap, leaf.addr())?;
                    cell.store(f, Release);
                    Status::New
                } else {
                    frame_status(at::<SubgoalFrame>(f).state.load(Acquire))
                };
                Ok(Lookup {
                    handle: handle(leaf.addr(), f, 0),
                    status,
                })
            }
            Design::Fs | Design::Pac => {
                let root = self.shared_root(heap, p.te)?;
                let (leaf, _) = self.st.check_insert(heap, root, toks)?;
                let (s, _) = self.cas_init(
                    heap,
                    leaf.aux(),
                    |s, h| s.new_entry(h),
                    |s, h, a| s.destroy_entry(h, a),
                )?;
                let se: &SubgoalEntry = at(s);
                let cell = self.ba_cell(heap, se.ba.load(Relaxed), tid)?;
                let mut f = cell.load(Acquire);
                let se_done = se.state.load(Acquire) & COMPLETE != 0;
                let status = if f == 0 {
                    f = self.alloc_zeroed(heap, Kind::SplitFrame)?;
                    let fr: &SplitFrame = at(f);
                    fr.bp.store(s, Relaxed);
                    if se_done {
                        fr.state.store(COMPLETE, Relaxed);
                    }
                    cell.store(f, Release);
                    if se_done {
                        Status::Complete
                    } else {
                        Status::New
                    }
                } else if se_done || at::<SplitFrame>(f).state.load(Acquire) & COMPLETE != 0 {
                    Status::Complete
                } else {
                    Status::Incomplete
                };
                Ok(Lookup {
                    handle: handle(leaf.addr(), f, s),
                    status,
                })
            }
            Design::Pas => {
                let root = self.shared_root(heap, p.te)?;
                let (leaf, _) = self.st.check_insert(heap, root, toks)?;
                let head = leaf.aux().load(Acquire) & !LATCH;
                if head != 0 && at::<SubgoalFrame>(head).state.load(Acquire) & COMPLETE != 0 {
                    return Ok(Lookup {
                        handle: handle(leaf.addr(), head, 0),
                        status: Status::Complete,
                    });
                }
                let lk = lock_list(leaf);
                let head = lk & !LATCH;
                let mut res = None;
                if head != 0 && at::<SubgoalFrame>(head).state.load(Acquire) & COMPLETE != 0 {
                    res = Some((head, Status::Complete));
                } else {
                    let mut cur = head;
                    while cur != 0 {
                        let fr: &SubgoalFrame = at(cur);
                        if fr.owner.load(Relaxed) == tid as usize {
                            res = Some((cur, frame_status(fr.state.load(Acquire))));
                            break;
                        }
                        cur = fr.next.load(Acquire);
                    }
                }
                let (f, status, new_head) = match res {
                    Some((f, st)) => (f, st, head),
                    None => match self.new_frame(heap, leaf.addr()) {
                        Ok(f) => {
                            at::<SubgoalFrame>(f).next.store(head, Relaxed);
                            (f, Status::New, f)
                        }
                        Err(e) => {
                            leaf.aux().store(head, Release);
                            return Err(e.into());
                        }
                    },
                };
                leaf.aux().store(new_head, Release);
                Ok(Lookup {
                    handle: handle(leaf.addr(), f, 0),
                    status,
                })
            }
        }
    }

    pub fn is_complete(&self, h: &SubgoalHandle) -> bool {
        match self.cfg.design {
            Design::Fs | Design::Pac => {
                at::<SplitFrame>(h.frame).state.load(Acquire) & COMPLETE != 0
                    || at::<SubgoalEntry>(h.se).state.load(Acquire) & COMPLETE != 0
            }
            _ => at::<SubgoalFrame>(h.frame).state.load(Acquire) & COMPLETE != 0,
        }
    }

    /// PAS: a completed frame published by any thread, if one exists.
    pub fn published(&self, h: &SubgoalHandle) -> Option<SubgoalHandle> {
        if self.cfg.design != Design::Pas {
            return None;
        }
        let leaf = unsafe { NodeRef::from_addr(h.leaf) };
        let head = leaf.aux().load(Acquire) & !LATCH;
        if head != 0 && at::<SubgoalFrame>(head).state.load(Acquire) & COMPLETE != 0 {
            Some(SubgoalHandle { frame: head, ..*h })
        } else {
            None
        }
    }

    /// Inserts an answer (the token sequence of the call's substitution).
    pub fn record_answer(
        &self,
        heap: &mut LocalHeap,
        h: &SubgoalHandle,
        tokens: &[Token],
    ) -> Result<(AnswerOutcome, NodeRef), TableError> {
        match self.cfg.design {
            Design::Cs => unreachable!(),
            Design::Ns | Design::Ss | Design::Pas => {
                let fr: &SubgoalFrame = at(h.frame);
                if fr.state.load(Acquire) & COMPLETE != 0 {
                    return Err(TableError::Contract("answer recorded into a completed subgoal".into()));
                }
                let root = unsafe { NodeRef::from_addr(fr.answer_root.load(Relaxed)) };
                let (leaf, ins) = self.at.check_insert(heap, root, tokens)?;
                if ins {
                    private_append(fr, leaf);
                    Ok((AnswerOutcome::New, leaf))
                } else {
                    Ok((AnswerOutcome::Repeated, leaf))
                }
            }
            Design::Fs => {
                if at::<SplitFrame>(h.frame).state.load(Acquire) & COMPLETE != 0 {
                    return Err(TableError::Contract("answer recorded into a completed subgoal".into()));
                }
                let se: &SubgoalEntry = at(h.se);
                let root = unsafe { NodeRef::from_addr(se.answer_root.load(Relaxed)) };
                let (leaf, ins) = self.at.check_insert(heap, root, tokens)?;
                if ins {
                    shared_append(se, leaf);
                    Ok((AnswerOutcome::New, leaf))
                } else {
                    await_linked(leaf);
                    Ok((AnswerOutcome::Repeated, leaf))
                }
            }
            Design::Pac => {
                let fr: &SplitFrame = at(h.frame);
                if fr.state.load(Acquire) & COMPLETE != 0 {
                    return Err(TableError::Contract("answer recorded into a completed subgoal".into()));
                }
                let se: &SubgoalEntry = at(h.se);
                let root = unsafe { NodeRef::from_addr(se.answer_root.load(Relaxed)) };
                let (leaf, _) = self.at.check_insert(heap, root, tokens)?;
                if self.chain_insert(heap, fr, leaf.addr())? {
                    Ok((AnswerOutcome::New, leaf))
                } else {
                    Ok((AnswerOutcome::Repeated, leaf))
                }
            }
        }
    }

    /// PAC private answer set: insertion-ordered chain, indexed by a small
    /// non-concurrent hash trie once it outgrows a linear scan.
    fn chain_insert(
        &self,
        heap: &mut LocalHeap,
        fr: &SplitFrame,
        leaf: usize,
    ) -> Result<bool, AllocError> {
        let n = fr.state.load(Relaxed) >> 8;
        let hash = fr.chain_hash.load(Relaxed);
        if hash == 0 {
            let mut cur = fr.chain_head.load(Relaxed);
            while cur != 0 {
                let c: &ChainNode = at(cur);
                if c.leaf.load(Relaxed) == leaf {
                    return Ok(false);
                }
                cur = c.next.load(Relaxed);
            }
        } else if self.chain_hash_find(hash, leaf) {
            return Ok(false);
        }
        let c = self.alloc_zeroed(heap, Kind::ChainNode)?;
        let cn: &ChainNode = at(c);
        cn.leaf.store(leaf, Relaxed);
        let tail = fr.chain_tail.load(Relaxed);
        if tail == 0 {
            fr.chain_head.store(c, Release);
        } else {
            at::<ChainNode>(tail).next.store(c, Release);
        }
        fr.chain_tail.store(c, Relaxed);
        fr.state.fetch_add(1 << 8, Relaxed);
        if hash != 0 {
            self.chain_hash_add(heap, hash, c)?;
        } else if n + 1 > CHAIN_HASH_AFTER {
            let l = self.alloc_zeroed(heap, Kind::ChainLevel)?;
            let mut cur = fr.chain_head.load(Relaxed);
            while cur != 0 {
                self.chain_hash_add(heap, l, cur)?;
                cur = at::<ChainNode>(cur).next.load(Relaxed);
            }
            fr.chain_hash.store(l, Relaxed);
        }
        Ok(true)
    }

    fn chain_hash_find(&self, mut l: usize, leaf: usize) -> bool {
        let h = mix64(leaf as u64);
        loop {
            let lv: &ChainLevel = at(l);
            let d = lv.depth.load(Relaxed) as u32;
            let v = lv.buckets[((h >> (d * CHAIN_W)) & 7) as usize].load(Relaxed);
            if v & 1 == 1 {
                l = v & !1;
                continue;
            }
            let mut cur = v;
            while cur != 0 {
                let c: &ChainNode = at(cur);
                if c.leaf.load(Relaxed) == leaf {
                    return true;
                }
                cur = c.hash_next.load(Relaxed);
            }
            return false;
        }
    }

    fn chain_hash_add(&self, heap: &mut LocalHeap, mut l: usize, c: usize) -> Result<(), AllocError> {
        let h = mix64(at::<ChainNode>(c).leaf.load(Relaxed) as u64);
        loop {
            let lv: &ChainLevel = at(l);
            let d = lv.depth.load(Relaxed) as u32;
            let slot = &lv.buckets[((h >> (d * CHAIN_W)) & 7) as usize];
            let v = slot.load(Relaxed);
            if v & 1 == 1 {
                l = v & !1;
                continue;
            }
            at::<ChainNode>(c).hash_next.store(v, Relaxed);
            slot.store(c, Relaxed);
            let mut len = 0;
            let mut cur = c;
            while cur != 0 {
                len += 1;
                cur = at::<ChainNode>(cur).hash_next.load(Relaxed);
            }
            if len > CHAIN_HASH_AFTER && (d + 1) * CHAIN_W < 64 {
                let nl = self.alloc_zeroed(heap, Kind::ChainLevel)?;
                at::<ChainLevel>(nl).depth.store(d as usize + 1, Relaxed);
                let mut cur = slot.load(Relaxed);
                slot.store(nl | 1, Relaxed);
                while cur != 0 {
                    let next = at::<ChainNode>(cur).hash_next.load(Relaxed);
                    self.chain_hash_add(heap, nl, cur)?;
                    cur = next;
                }
            }
            return Ok(());
        }
    }

    fn free_chain(&self, heap: &mut LocalHeap, fr: &SplitFrame) -> Result<(), AllocError> {
        let mut cur = fr.chain_head.swap(0, Relaxed);
        while cur != 0 {
            let next = at::<ChainNode>(cur).next.load(Relaxed);
            self.free(heap, Kind::ChainNode, cur)?;
            cur = next;
        }
        fr.chain_tail.store(0, Relaxed);
        let l = fr.chain_hash.swap(0, Relaxed);
        if l != 0 {
            self.free_chain_levels(heap, l)?;
        }
        Ok(())
    }

    fn free_chain_levels(&self, heap: &mut LocalHeap, l: usize) -> Result<(), AllocError> {
        let lv: &ChainLevel = at(l);
        for b in &lv.buckets {
            let v = b.load(Relaxed);
            if v & 1 == 1 {
                self.free_chain_levels(heap, v & !1)?;
            }
        }
        self.free(heap, Kind::ChainLevel, l)
    }

    /// Next valid answer leaf after `cur`.
    pub fn next_answer(&self, h: &SubgoalHandle, cur: &mut AnswerCursor) -> Option<NodeRef> {
        loop {
            let next = match (self.cfg.design, *cur) {
                (Design::Ns | Design::Ss | Design::Pas | Design::Cs, AnswerCursor::Start) => {
                    at::<SubgoalFrame>(h.frame).first.load(Acquire)
                }
                (Design::Fs, AnswerCursor::Start) => at::<SubgoalEntry>(h.se).first.load(Acquire),
                (Design::Pac, AnswerCursor::Start) => {
                    // a completed entry is read through its public list
                    let se: &SubgoalEntry = at(h.se);
                    if se.state.load(Acquire) & COMPLETE != 0 {
                        se.first.load(Acquire)
                    } else {
                        let head = at::<SplitFrame>(h.frame).chain_head.load(Acquire);
                        if head == 0 {
                            return None;
                        }
                        *cur = AnswerCursor::Chain(head);
                        return Some(unsafe {
                            NodeRef::from_addr(at::<ChainNode>(head).leaf.load(Relaxed))
                        });
                    }
                }
                (_, AnswerCursor::Leaf(l)) => unsafe { NodeRef::from_addr(l) }.aux().load(Acquire) & !FLAGS,
                (_, AnswerCursor::Chain(c)) => {
                    let n = at::<ChainNode>(c).next.load(Acquire);
                    if n == 0 {
                        return None;
                    }
                    *cur = AnswerCursor::Chain(n);
                    return Some(unsafe { NodeRef::from_addr(at::<ChainNode>(n).leaf.load(Relaxed)) });
                }
            };
            if next == 0 {
                return None;
            }
            *cur = AnswerCursor::Leaf(next);
            let leaf = unsafe { NodeRef::from_addr(next) };
            if leaf.aux().load(Acquire) & INVALID == 0 {
                return Some(leaf);
            }
        }
    }

    /// Valid answers currently visible through `h`.
    pub fn answers(&self, h: &SubgoalHandle) -> Vec<Vec<Token>> {
        let mut cur = AnswerCursor::Start;
        let mut out = Vec::new();
        while let Some(l) = self.next_answer(h, &mut cur) {
            out.push(leaf_tokens(l));
        }
        out
    }

    /// Marks the subgoal complete for the calling thread. Frees nothing.
    pub fn complete(
        &self,
        heap: &mut LocalHeap,
        h: &SubgoalHandle,
    ) -> Result<CompleteOutcome, TableError> {
        let _ = heap;
        match self.cfg.design {
            Design::Cs => unreachable!(),
            Design::Ns | Design::Ss => {
                at::<SubgoalFrame>(h.frame).state.fetch_or(COMPLETE, AcqRel);
                Ok(CompleteOutcome::Completed)
            }
            Design::Pas => {
                let leaf = unsafe { NodeRef::from_addr(h.leaf) };
                let fr: &SubgoalFrame = at(h.frame);
                let lk = lock_list(leaf);
                let head = lk & !LATCH;
                if head != h.frame && at::<SubgoalFrame>(head).state.load(Acquire) & COMPLETE != 0 {
                    fr.state.fetch_or(COMPLETE, AcqRel);
                    leaf.aux().store(head, Release);
                    return Ok(CompleteOutcome::Superseded);
                }
                let mut new_head = head;
                if head != h.frame {
                    unlink_frame(head, h.frame);
                    fr.next.store(head, Relaxed);
                    new_head = h.frame;
                }
                fr.state.fetch_or(COMPLETE, AcqRel);
                leaf.aux().store(new_head, Release);
                Ok(CompleteOutcome::Published)
            }
            Design::Fs => {
                at::<SplitFrame>(h.frame).state.fetch_or(COMPLETE, AcqRel);
                at::<SubgoalEntry>(h.se).state.fetch_or(COMPLETE, AcqRel);
                Ok(CompleteOutcome::Completed)
            }
            Design::Pac => {
                let fr: &SplitFrame = at(h.frame);
                let se: &SubgoalEntry = at(h.se);
                if se.state.load(Acquire) & COMPLETE == 0 {
                    loop {
                        let s = se.state.load(Acquire);
                        if s & LATCH == 0
                            && se.state.compare_exchange(s, s | LATCH, AcqRel, Acquire).is_ok()
                        {
                            break;
                        }
                        std::hint::spin_loop();
                    }
                    if se.state.load(Acquire) & COMPLETE == 0 {
                        // first completer publishes its private chain
                        let mut prev = 0usize;
                        let mut cur = fr.chain_head.load(Relaxed);
                        while cur != 0 {
                            let leaf = at::<ChainNode>(cur).leaf.load(Relaxed);
                            unsafe { NodeRef::from_addr(leaf) }.aux().store(0, Relaxed);
                            if prev == 0 {
                                se.first.store(leaf, Relaxed);
                            } else {
                                unsafe { NodeRef::from_addr(prev) }.aux().store(leaf, Relaxed);
                            }
                            prev = leaf;
                            cur = at::<ChainNode>(cur).next.load(Relaxed);
                        }
                        se.last.store(prev, Relaxed);
                        se.state.fetch_or(COMPLETE, Release);
                    }
                    se.state.fetch_and(!LATCH, Release);
                }
                fr.state.fetch_or(COMPLETE, AcqRel);
                Ok(CompleteOutcome::Completed)
            }
        }
    }

    /// Releases private leftovers of `h` once the caller holds no cursors
    /// into them: invalidated answers, PAC answer chains, and PAS frames that
    /// are incomplete or (with discard enabled) superseded.
    pub fn release_private(&self, heap: &mut LocalHeap, h: &SubgoalHandle) -> Result<(), TableError> {
        match self.cfg.design {
            Design::Cs => unreachable!(),
            Design::Ns | Design::Ss => self.purge_invalid(heap, h.frame)?,
            Design::Fs => {}
            Design::Pac => self.free_chain(heap, at(h.frame))?,
            Design::Pas => {
                let fr: &SubgoalFrame = at(h.frame);
                if fr.owner.load(Relaxed) != heap.tid() as usize {
                    return Ok(());
                }
                let leaf = unsafe { NodeRef::from_addr(h.leaf) };
                let complete = fr.state.load(Acquire) & COMPLETE != 0;
                let lk = lock_list(leaf);
                let head = lk & !LATCH;
                let published_elsewhere =
                    head != h.frame && at::<SubgoalFrame>(head).state.load(Acquire) & COMPLETE != 0;
                if head != h.frame && (!complete || (published_elsewhere && self.cfg.pas_discard)) {
                    unlink_frame(head, h.frame);
                    leaf.aux().store(head, Release);
                    self.free_private_frame(heap, h.frame)?;
                } else {
                    leaf.aux().store(head, Release);
                    self.purge_invalid(heap, h.frame)?;
                }
            }
        }
        Ok(())
    }

    pub fn complete_and_release(
        &self,
        heap: &mut LocalHeap,
        h: &SubgoalHandle,
    ) -> Result<CompleteOutcome, TableError> {
        let o = self.complete(heap, h)?;
        self.release_private(heap, h)?;
        Ok(o)
    }

    fn purge_invalid(&self, heap: &mut LocalHeap, f: usize) -> Result<(), AllocError> {
        let fr: &SubgoalFrame = at(f);
        if fr.invalid.load(Relaxed) == 0 {
            return Ok(());
        }
        let mut prev = 0usize;
        let mut cur = fr.first.load(Relaxed);
        while cur != 0 {
            let l = unsafe { NodeRef::from_addr(cur) };
            let a = l.aux().load(Relaxed);
            let next = a & !INVALID;
            if a & INVALID != 0 {
                if prev == 0 {
                    fr.first.store(next, Release);
                } else {
                    unsafe { NodeRef::from_addr(prev) }.aux().store(next, Release);
                }
                if next == 0 {
                    fr.last.store(prev, Relaxed);
                }
                self.at.free_node(heap, l)?;
            } else {
                prev = cur;
            }
            cur = next;
        }
        fr.invalid.store(0, Relaxed);
        Ok(())
    }

    fn invalid_leaves(fr: &SubgoalFrame) -> Vec<usize> {
        let mut out = Vec::new();
        if fr.invalid.load(Relaxed) == 0 {
            return out;
        }
        let mut cur = fr.first.load(Relaxed);
        while cur != 0 {
            let a = unsafe { NodeRef::from_addr(cur) }.aux().load(Relaxed);
            if a & INVALID != 0 {
                out.push(cur);
            }
            cur = a & !INVALID;
        }
        out
    }

    fn free_private_frame(&self, heap: &mut LocalHeap, f: usize) -> Result<(), AllocError> {
        let fr: &SubgoalFrame = at(f);
        let inv = Self::invalid_leaves(fr);
        self.at
            .free_trie(heap, unsafe { NodeRef::from_addr(fr.answer_root.load(Relaxed)) })?;
        for l in inv {
            self.at.free_node(heap, unsafe { NodeRef::from_addr(l) })?;
        }
        self.free(heap, Kind::SubgoalFrame, f)
    }

    /// Mode-directed insertion for predicates with an output-mode list.
    /// `index` are the tokens of the index arguments' substitution, `outputs`
    /// the output argument values, `modes` their modes.
    pub fn mode_insert(
        &self,
        heap: &mut LocalHeap,
        h: &SubgoalHandle,
        index: &[Token],
        outputs: &[Term],
        modes: &[Mode],
    ) -> Result<(ModeOutcome, Option<NodeRef>), TableError> {
        if !self.cfg.design.supports_modes() {
            return Err(TableError::Unsupported(format!(
                "mode-directed tabling is not available under {}",
                self.cfg.design
            )));
        }
        let fr: &SubgoalFrame = at(h.frame);
        if fr.state.load(Acquire) & COMPLETE != 0 {
            return Err(TableError::Contract("answer recorded into a completed subgoal".into()));
        }
        for (m, o) in modes.iter().zip(outputs) {
            if matches!(m, Mode::Max | Mode::Min | Mode::Sum) && !matches!(o, Term::Int(_)) {
                return Err(TableError::Type(format!("{m:?} mode needs a number, got {o}")));
            }
        }
        let mut new_out = outputs.to_vec();
        if modes.iter().all(|m| *m == Mode::All || *m == Mode::Index) {
            let toks = mode_tokens(index, &new_out)?;
            let (o, l) = self.record_answer(heap, h, &toks)?;
            return Ok((
                if o == AnswerOutcome::New {
                    ModeOutcome::Inserted
                } else {
                    ModeOutcome::Discarded
                },
                Some(l),
            ));
        }
        let root = unsafe { NodeRef::from_addr(fr.answer_root.load(Relaxed)) };
        let existing = self
            .at
            .lookup(root, index)
            .and_then(|n| self.at.leaves(n).into_iter().next());
        if let Some(old) = existing {
            let toks = leaf_tokens(old);
            let old_out = decode_subst(&toks[index.len()..], outputs.len() as u32)?;
            let mut better = false;
            for (i, m) in modes.iter().enumerate() {
                let c = term_cmp(&outputs[i], &old_out[i]);
                match m {
                    Mode::Max if c == CmpOrdering::Greater => better = true,
                    Mode::Max if c == CmpOrdering::Less => return Ok((ModeOutcome::Discarded, None)),
                    Mode::Min if c == CmpOrdering::Less => better = true,
                    Mode::Min if c == CmpOrdering::Greater => {
                        return Ok((ModeOutcome::Discarded, None))
                    }
                    Mode::First => return Ok((ModeOutcome::Discarded, None)),
                    Mode::Last => better = true,
                    Mode::Sum => {
                        let (Term::Int(a), Term::Int(b)) = (&outputs[i], &old_out[i]) else {
                            return Err(TableError::Type("sum mode needs integer outputs".into()));
                        };
                        new_out[i] = Term::Int(a + b);
                        better = true;
                    }
                    _ => continue,
                }
                if better {
                    break;
                }
            }
            if !better {
                return Ok((ModeOutcome::Discarded, None));
            }
            self.invalidate(heap, h, old)?;
            let toks = mode_tokens(index, &new_out)?;
            let (_, l) = self.record_answer(heap, h, &toks)?;
            Ok((ModeOutcome::Replaced, Some(l)))
        } else {
            let toks = mode_tokens(index, &new_out)?;
            let (o, l) = self.record_answer(heap, h, &toks)?;
            debug_assert_eq!(o, AnswerOutcome::New);
            Ok((ModeOutcome::Inserted, Some(l)))
        }
    }

    /// Detaches a valid answer from its private trie and tags it invalid. The
    /// leaf stays in the answer list (consumers skip it) until released.
    pub fn invalidate(
        &self,
        heap: &mut LocalHeap,
        h: &SubgoalHandle,
        leaf: NodeRef,
    ) -> Result<(), TableError> {
        if !self.cfg.design.private_answers() {
            return Err(TableError::Unsupported("invalidation needs private answer tries".into()));
        }
        let fr: &SubgoalFrame = at(h.frame);
        if fr.owner.load(Relaxed) != heap.tid() as usize {
            return Err(TableError::Contract("only the owner may invalidate answers".into()));
        }
        if leaf.aux().load(Relaxed) & INVALID != 0 {
            return Ok(());
        }
        self.at.remove_path(heap, leaf)?;
        leaf.aux().fetch_or(INVALID, Release);
        fr.invalid.fetch_add(1, Relaxed);
        Ok(())
    }

    /// Answer trie statistics of the frame behind `h` (private designs) or of
    /// the shared trie (FS, PAC).
    pub fn answer_trie_stats(&self, h: &SubgoalHandle) -> TrieStats {
        self.at.stats(self.answer_root(h))
    }

    fn answer_root(&self, h: &SubgoalHandle) -> NodeRef {
        let a = match self.cfg.design {
            Design::Fs | Design::Pac => at::<SubgoalEntry>(h.se).answer_root.load(Acquire),
            _ => at::<SubgoalFrame>(h.frame).answer_root.load(Acquire),
        };
        unsafe { NodeRef::from_addr(a) }
    }

    /// Frees every structure. Requires that no worker is attached.
    pub fn abolish(&self, heap: &mut LocalHeap) -> Result<(), TableError> {
        if self.active.load(Acquire) != 0 {
            return Err(TableError::Contract("abolish called while workers are running".into()));
        }
        if self.abolished.swap(true, AcqRel) {
            return Ok(());
        }
        heap.adopt_all();
        let preds: Vec<PredEntry> = std::mem::take(&mut *self.preds.write());
        self.by_id.write().clear();
        for p in preds {
            self.free_pred(heap, p.te)?;
        }
        self.st.arena().clear();
        self.at.arena().clear();
        self.alloc.reclaim_global();
        Ok(())
    }

    fn free_pred(&self, heap: &mut LocalHeap, te: usize) -> Result<(), TableError> {
        let e: &TableEntry = at(te);
        let root = e.root.load(Acquire);
        match self.cfg.design {
            Design::Cs => unreachable!(),
            Design::Ns => {
                for r in Self::ba_values(root) {
                    self.free_subgoal_trie(heap, r)?;
                }
                self.free_ba(heap, root)?;
            }
            _ => {
                if root != 0 {
                    self.free_subgoal_trie(heap, root)?;
                }
            }
        }
        self.free(heap, Kind::TableEntry, te)?;
        Ok(())
    }

    fn free_subgoal_trie(&self, heap: &mut LocalHeap, root: usize) -> Result<(), TableError> {
        let root = unsafe { NodeRef::from_addr(root) };
        for leaf in self.st.leaves(root) {
            let payload = leaf.aux().load(Acquire) & !LATCH;
            if payload == 0 {
                continue;
            }
            match self.cfg.design {
                Design::Ns => self.free_private_frame(heap, payload)?,
                Design::Ss => {
                    for f in Self::ba_values(payload) {
                        self.free_private_frame(heap, f)?;
                    }
                    self.free_ba(heap, payload)?;
                }
                Design::Pas => {
                    let mut cur = payload;
                    while cur != 0 {
                        let next = at::<SubgoalFrame>(cur).next.load(Relaxed);
                        self.free_private_frame(heap, cur)?;
                        cur = next;
                    }
                }
                Design::Fs | Design::Pac => {
                    let se: &SubgoalEntry = at(payload);
                    let ba = se.ba.load(Relaxed);
                    for f in Self::ba_values(ba) {
                        self.free_chain(heap, at(f))?;
                        self.free(heap, Kind::SplitFrame, f)?;
                    }
                    self.free_ba(heap, ba)?;
                    self.at
                        .free_trie(heap, unsafe { NodeRef::from_addr(se.answer_root.load(Relaxed)) })?;
                    self.free(heap, Kind::SubgoalEntry, payload)?;
                }
                Design::Cs => unreachable!(),
            }
        }
        self.st.free_trie(heap, root)?;
        Ok(())
    }

    /// Walks every live structure of a quiescent table space.
    pub fn census(&self) -> Census {
        let mut c = Census {
            design: self.cfg.design,
            blocks: BTreeMap::new(),
            preds: Vec::new(),
            arena_bytes: (self.st.arena().bytes() + self.at.arena().bytes()) as u64,
        };
        let preds = self.preds.read();
        for p in preds.iter() {
            c.count(Kind::TableEntry, 1, SIZES.te);
            let mut pc = PredCensus {
                pred: p.pred.to_string(),
                te_bytes: SIZES.te,
                subgoal_tries: Vec::new(),
                subgoals: BTreeMap::new(),
            };
            let root = at::<TableEntry>(p.te).root.load(Acquire);
            match self.cfg.design {
                Design::Ns => {
                    let ba_bytes = self.count_ba(&mut c, root);
                    pc.te_bytes += ba_bytes;
                    for r in Self::ba_values(root) {
                        self.census_subgoal_trie(&mut c, &mut pc, r);
                    }
                }
                _ if root != 0 => self.census_subgoal_trie(&mut c, &mut pc, root),
                _ => {}
            }
            c.preds.push(pc);
        }
        c
    }

    fn count_ba(&self, c: &mut Census, ba: usize) -> u64 {
        let g = Self::ba_groups(ba).len() as u64;
        c.count(Kind::BucketArray, 1, SIZES.ba);
        c.count(Kind::BucketGroup, g, SIZES.ba_group);
        SIZES.ba + g * SIZES.ba_group
    }

    /// Allocator-backed bytes of one trie (doubling arrays are not).
    fn trie_bytes(&self, s: &TrieStats) -> u64 {
        if self.cfg.trie.scheme == crate::trie::HashScheme::HashTrie {
            s.nodes * SIZES.node + s.level_bytes
        } else {
            s.nodes * SIZES.node
        }
    }

    fn census_answer_trie(&self, c: &mut Census, root: usize) -> (u64, u64) {
        let s = self.at.stats(unsafe { NodeRef::from_addr(root) });
        c.count(Kind::AnswerNode, s.nodes, SIZES.node);
        if self.cfg.trie.scheme == crate::trie::HashScheme::HashTrie {
            c.count_bytes(Kind::AnswerLevel, s.levels, s.level_bytes);
        }
        (self.trie_bytes(&s), s.leaves)
    }

    fn census_private_frame(&self, c: &mut Census, f: usize, sc: &mut SubgoalCensus) {
        let fr: &SubgoalFrame = at(f);
        c.count(Kind::SubgoalFrame, 1, SIZES.sf);
        let inv = Self::invalid_leaves(fr).len() as u64;
        c.count(Kind::AnswerNode, inv, SIZES.node);
        let (bytes, leaves) = self.census_answer_trie(c, fr.answer_root.load(Relaxed));
        sc.frames += 1;
        sc.answer_tries.push(bytes + inv * SIZES.node);
        sc.answers.push(leaves);
        if fr.state.load(Acquire) & COMPLETE != 0 {
            sc.complete_frames += 1;
        }
    }

    fn census_subgoal_trie(&self, c: &mut Census, pc: &mut PredCensus, root: usize) {
        let rootn = unsafe { NodeRef::from_addr(root) };
        let s = self.st.stats(rootn);
        c.count(Kind::SubgoalNode, s.nodes, SIZES.node);
        if self.cfg.trie.scheme == crate::trie::HashScheme::HashTrie {
            c.count_bytes(Kind::SubgoalLevel, s.levels, s.level_bytes);
        }
        pc.subgoal_tries.push(self.trie_bytes(&s));
        for leaf in self.st.leaves(rootn) {
            let payload = leaf.aux().load(Acquire) & !LATCH;
            let key = leaf_tokens(leaf);
            let sc = pc.subgoals.entry(key).or_default();
            if payload == 0 {
                continue;
            }
            match self.cfg.design {
                Design::Ns => self.census_private_frame(c, payload, sc),
                Design::Ss => {
                    sc.ba_bytes = self.count_ba(c, payload);
                    for f in Self::ba_values(payload) {
                        self.census_private_frame(c, f, sc);
                    }
                }
                Design::Pas => {
                    let mut cur = payload;
                    while cur != 0 {
                        self.census_private_frame(c, cur, sc);
                        cur = at::<SubgoalFrame>(cur).next.load(Relaxed);
                    }
                }
                Design::Fs | Design::Pac => {
                    let se: &SubgoalEntry = at(payload);
                    c.count(Kind::SubgoalEntry, 1, SIZES.se_fs);
                    sc.se_bytes = SIZES.se_fs;
                    sc.ba_bytes = self.count_ba(c, se.ba.load(Relaxed));
                    for f in Self::ba_values(se.ba.load(Relaxed)) {
                        let fr: &SplitFrame = at(f);
                        c.count(Kind::SplitFrame, 1, SIZES.sf_fs + SIZES.bp);
                        sc.frames += 1;
                        if fr.state.load(Acquire) & COMPLETE != 0 {
                            sc.complete_frames += 1;
                        }
                        let mut chain = 0;
                        let mut cur = fr.chain_head.load(Relaxed);
                        while cur != 0 {
                            chain += 1;
                            cur = at::<ChainNode>(cur).next.load(Relaxed);
                        }
                        c.count(Kind::ChainNode, chain, std::mem::size_of::<ChainNode>() as u64);
                        let l = fr.chain_hash.load(Relaxed);
                        if l != 0 {
                            let n = count_chain_levels(l);
                            c.count(Kind::ChainLevel, n, std::mem::size_of::<ChainLevel>() as u64);
                        }
                        sc.chain_nodes += chain;
                    }
                    let (bytes, leaves) = self.census_answer_trie(c, se.answer_root.load(Relaxed));
                    sc.answer_tries.push(bytes);
                    sc.answers.push(leaves);
                }
                Design::Cs => unreachable!(),
            }
        }
    }

    /// Summed statistics of every subgoal trie and every answer trie.
    pub fn trie_stats(&self) -> (TrieStats, TrieStats) {
        let mut st = TrieStats::default();
        let mut at_ = TrieStats::default();
        let preds = self.preds.read();
        let mut add_answer = |root: usize| at_.add(&self.at.stats(unsafe { NodeRef::from_addr(root) }));
        for p in preds.iter() {
            let root = at::<TableEntry>(p.te).root.load(Acquire);
            let roots = match self.cfg.design {
                Design::Ns => Self::ba_values(root),
                _ if root != 0 => vec![root],
                _ => vec![],
            };
            for r in roots {
                let rn = unsafe { NodeRef::from_addr(r) };
                st.add(&self.st.stats(rn));
                for leaf in self.st.leaves(rn) {
                    let payload = leaf.aux().load(Acquire) & !LATCH;
                    if payload == 0 {
                        continue;
                    }
                    match self.cfg.design {
                        Design::Ns => add_answer(at::<SubgoalFrame>(payload).answer_root.load(Relaxed)),
                        Design::Ss => {
                            for f in Self::ba_values(payload) {
                                add_answer(at::<SubgoalFrame>(f).answer_root.load(Relaxed));
                            }
                        }
                        Design::Pas => {
                            let mut cur = payload;
                            while cur != 0 {
                                add_answer(at::<SubgoalFrame>(cur).answer_root.load(Relaxed));
                                cur = at::<SubgoalFrame>(cur).next.load(Relaxed);
                            }
                        }
                        Design::Fs | Design::Pac => {
                            add_answer(at::<SubgoalEntry>(payload).answer_root.load(Relaxed))
                        }
                        Design::Cs => unreachable!(),
                    }
                }
            }
        }
        (st, at_)
    }

    /// Number of distinct subgoals (variant calls) across the table space.
    pub fn subgoal_count(&self) -> u64 {
        let c = self.census();
        c.preds.iter().map(|p| p.subgoals.len() as u64).sum()
    }
}

fn count_chain_levels(l: usize) -> u64 {
    let lv: &ChainLevel = at(l);
    1 + lv
        .buckets
        .iter()
        .map(|b| b.load(Relaxed))
        .filter(|v| v & 1 == 1)
        .map(|v| count_chain_levels(v & !1))
        .sum::<u64>()
}

fn frame_status(state: usize) -> Status {
    if state & COMPLETE != 0 {
        Status::Complete
    } else {
        Status::Incomplete
    }
}

/// Spins until the PAS frame-list latch (bit 1 of the leaf payload) is held.
/// Returns the payload with the latch bit set; storing a value without the
/// bit releases it.
fn lock_list(leaf: NodeRef) -> usize {
    loop {
        let v = leaf.aux().load(Acquire);
        if v & LATCH == 0
            && leaf
                .aux()
                .compare_exchange(v, v | LATCH, AcqRel, Acquire)
                .is_ok()
        {
            return v | LATCH;
        }
        std::hint::spin_loop();
    }
}

fn unlink_frame(head: usize, f: usize) {
    let mut cur = head;
    while cur != 0 {
        let fr: &SubgoalFrame = at(cur);
        let next = fr.next.load(Relaxed);
        if next == f {
            fr.next.store(at::<SubgoalFrame>(f).next.load(Relaxed), Release);
            return;
        }
        cur = next;
    }
}

/// Appends to a frame's private answer list (single writer).
fn private_append(fr: &SubgoalFrame, leaf: NodeRef) {
    let last = fr.last.load(Relaxed);
    if last == 0 {
        fr.first.store(leaf.addr(), Release);
    } else {
        // keeps the invalid tag of the old tail
        unsafe { NodeRef::from_addr(last) }.aux().fetch_or(leaf.addr(), Release);
    }
    fr.last.store(leaf.addr(), Relaxed);
    fr.answers.fetch_add(1, Relaxed);
}

/// Lock-free append to the shared answer list (FS). A leaf's link word
/// gets `LINKED` once it is reachable from the list head; only then may a
/// successor be attached to it.
fn shared_append(se: &SubgoalEntry, leaf: NodeRef) {
    let l = leaf.addr();
    loop {
        let tail = se.last.load(Acquire);
        if tail == 0 {
            let first = se.first.load(Acquire);
            if first == 0 {
                if se.first.compare_exchange(0, l, AcqRel, Acquire).is_ok() {
                    leaf.aux().fetch_or(LINKED, Release);
                    let _ = se.last.compare_exchange(0, l, AcqRel, Acquire);
                    return;
                }
            } else {
                let _ = se.last.compare_exchange(0, first, AcqRel, Acquire);
            }
            continue;
        }
        let tn = unsafe { NodeRef::from_addr(tail) };
        let next = tn.aux().load(Acquire) & !FLAGS;
        if next != 0 {
            let _ = se.last.compare_exchange(tail, next, AcqRel, Acquire);
            continue;
        }
        if tn
            .aux()
            .compare_exchange(LINKED, l | LINKED, AcqRel, Acquire)
            .is_ok()
        {
            leaf.aux().fetch_or(LINKED, Release);
            let _ = se.last.compare_exchange(tail, l, AcqRel, Acquire);
            return;
        }
        std::hint::spin_loop();
    }
}

/// Waits until another thread's freshly inserted leaf is on the list, so a
/// thread never completes while one of its answers is still unreachable.
fn await_linked(leaf: NodeRef) {
    while leaf.aux().load(Acquire) & LINKED == 0 {
        std::hint::spin_loop();
        std::thread::yield_now();
    }
}

/// Answer tokens of a mode-directed answer: index part, then outputs.
pub fn mode_tokens(index: &[Token], outputs: &[Term]) -> Result<Vec<Token>, TermError> {
    let mut toks = index.to_vec();
    if !outputs.is_empty() {
        toks.extend(subst_tokens(outputs)?);
    }
    if toks.is_empty() {
        toks.push(Token::Unit);
    }
    Ok(toks)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SubgoalCensus {
    pub frames: u64,
    pub complete_frames: u64,
    pub ba_bytes: u64,
    pub se_bytes: u64,
    /// Bytes of each answer trie instance (nodes, hash levels, detached
    /// invalid leaves).
    pub answer_tries: Vec<u64>,
    /// Valid leaves of each instance.
    pub answers: Vec<u64>,
    pub chain_nodes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PredCensus {
    pub pred: String,
    /// Table entry bytes (with the private-root bucket array for NS).
    pub te_bytes: u64,
    /// Bytes of each subgoal trie instance.
    pub subgoal_tries: Vec<u64>,
    #[serde(skip)]
    pub subgoals: BTreeMap<Vec<Token>, SubgoalCensus>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Census {
    pub design: Design,
    /// Per structure kind: (blocks, bytes).
    pub blocks: BTreeMap<&'static str, (u64, u64)>,
    pub preds: Vec<PredCensus>,
    /// Doubling-scheme arrays, which live outside the page allocator.
    pub arena_bytes: u64,
}

impl Census {
    fn count(&mut self, k: Kind, n: u64, size: u64) {
        self.count_bytes(k, n, n * size)
    }

    fn count_bytes(&mut self, k: Kind, n: u64, bytes: u64) {
        if n == 0 {
            return;
        }
        let e = self.blocks.entry(k.name()).or_insert((0, 0));
        e.0 += n;
        e.1 += bytes;
    }

    pub fn total_blocks(&self) -> u64 {
        self.blocks.values().map(|v| v.0).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.blocks.values().map(|v| v.1).sum()
    }

    /// Mismatches between census block counts and allocator live blocks.
    pub fn cross_check(&self, heap: &HeapStats) -> Vec<String> {
        let mut out = Vec::new();
        for t in &heap.types {
            let mine = self.blocks.get(t.name.as_str()).map(|v| v.0).unwrap_or(0);
            if mine != t.live_blocks {
                out.push(format!("{}: census {} vs allocator {}", t.name, mine, t.live_blocks));
            }
        }
        out
    }
}

/// Decodes a substitution answer of `n` variables.
pub fn decode_answer(tokens: &[Token], n: u32) -> Result<Vec<Term>, TermError> {
    decode_subst(tokens, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{canonicalize, Term};
    use std::collections::BTreeSet;

    fn space(d: Design) -> TableSpace {
        let mut cfg = TableSpaceConfig::new(d);
        cfg.alloc.debug = true;
        TableSpace::new(cfg).unwrap()
    }

    fn key(args: Vec<Term>) -> SubgoalKey {
        canonicalize(&Term::compound("p", args)).unwrap()
    }

    fn int(i: i64) -> Vec<Token> {
        vec![Token::Int(i)]
    }

    #[test]
    fn sizes_partition_frame() {
        assert_eq!(SIZES.se_fs + SIZES.sf_fs, SIZES.sf);
        assert!(SIZES.sf_fs + SIZES.bp < SIZES.sf);
        assert_eq!(SIZES.ba_for(8), SIZES.ba);
        assert_eq!(SIZES.ba_for(9), SIZES.ba + SIZES.ba_group);
        assert_eq!(SIZES.ba_for(40), SIZES.ba + SIZES.ba_group);
        assert_eq!(SIZES.ba_for(41), SIZES.ba + 2 * SIZES.ba_group);
    }

    #[test]
    fn cs_is_not_a_runtime_design() {
        assert!(matches!(
            TableSpace::new(TableSpaceConfig::new(Design::Cs)),
            Err(TableError::Config(_))
        ));
    }

    #[test]
    fn lookup_record_complete_each_design() {
        for d in Design::RUNTIME {
            let s = space(d);
            let mut h = s.heap(0);
            let p = s.register(&mut h, PredId::new("p", 1), None).unwrap();
            let k = key(vec![Term::Var(0)]);
            let l = s.lookup(&mut h, p, &k).unwrap();
            assert_eq!(l.status, Status::New, "{d}");
            let again = s.lookup(&mut h, p, &k).unwrap();
            assert_eq!(again.status, Status::Incomplete);
            assert_eq!(again.handle, l.handle);
            for i in [3, 1, 3, 2] {
                s.record_answer(&mut h, &l.handle, &int(i)).unwrap();
            }
            assert_eq!(s.answers(&l.handle), vec![int(3), int(1), int(2)]);
            s.complete_and_release(&mut h, &l.handle).unwrap();
            assert!(s.is_complete(&l.handle));
            assert!(matches!(
                s.record_answer(&mut h, &l.handle, &int(9)),
                Err(TableError::Contract(_))
            ));
            let after = s.lookup(&mut h, p, &k).unwrap();
            assert_eq!(after.status, Status::Complete);
            assert_eq!(s.answers(&after.handle).len(), 3);
            let census = s.census();
            assert!(census.cross_check(&s.heap_stats()).is_empty(), "{d}: {:?}", census.cross_check(&s.heap_stats()));
            assert_eq!(census.total_bytes(), s.heap_stats().live_bytes());
            drop(h);
            let mut m = s.heap(MAX_THREADS as u32 - 1);
            s.abolish(&mut m).unwrap();
            s.abolish(&mut m).unwrap();
            assert_eq!(s.heap_stats().live_blocks(), 0);
        }
    }

    #[test]
    fn pac_repeated_is_per_thread() {
        let s = space(Design::Pac);
        let p = {
            let mut h = s.heap(0);
            s.register(&mut h, PredId::new("p", 1), None).unwrap()
        };
        let k = key(vec![Term::Var(0)]);
        let mut h0 = s.heap(0);
        let mut h1 = s.heap(1);
        let a = s.lookup(&mut h0, p, &k).unwrap().handle;
        let b = s.lookup(&mut h1, p, &k).unwrap().handle;
        assert_eq!(s.record_answer(&mut h0, &a, &int(1)).unwrap().0, AnswerOutcome::New);
        assert_eq!(s.record_answer(&mut h1, &b, &int(1)).unwrap().0, AnswerOutcome::New);
        assert_eq!(s.record_answer(&mut h1, &b, &int(1)).unwrap().0, AnswerOutcome::Repeated);
        for i in 2..40 {
            assert_eq!(s.record_answer(&mut h1, &b, &int(i)).unwrap().0, AnswerOutcome::New);
        }
        for i in 1..40 {
            assert_eq!(s.record_answer(&mut h1, &b, &int(i)).unwrap().0, AnswerOutcome::Repeated);
        }
        s.complete_and_release(&mut h1, &b).unwrap();
        // the public list is thread 1's order
        let pubs = s.answers(&s.lookup(&mut h1, p, &k).unwrap().handle);
        assert_eq!(pubs.len(), 39);
        // FS would report thread 1's first insert of 1 as repeated
        let f = space(Design::Fs);
        let mut g0 = f.heap(0);
        let mut g1 = f.heap(1);
        let fp = f.register(&mut g0, PredId::new("p", 1), None).unwrap();
        let x = f.lookup(&mut g0, fp, &k).unwrap().handle;
        let y = f.lookup(&mut g1, fp, &k).unwrap().handle;
        assert_eq!(f.record_answer(&mut g0, &x, &int(1)).unwrap().0, AnswerOutcome::New);
        assert_eq!(f.record_answer(&mut g1, &y, &int(1)).unwrap().0, AnswerOutcome::Repeated);
    }

    #[test]
    fn pas_publish_and_discard() {
        let s = space(Design::Pas);
        let mut h0 = s.heap(0);
        let mut h1 = s.heap(1);
        let p = s.register(&mut h0, PredId::new("p", 1), None).unwrap();
        let k = key(vec![Term::Var(0)]);
        let a = s.lookup(&mut h0, p, &k).unwrap();
        let b = s.lookup(&mut h1, p, &k).unwrap();
        assert_eq!((a.status, b.status), (Status::New, Status::New));
        assert_ne!(a.handle, b.handle);
        s.record_answer(&mut h0, &a.handle, &int(1)).unwrap();
        s.record_answer(&mut h1, &b.handle, &int(1)).unwrap();
        assert_eq!(s.complete(&mut h1, &b.handle).unwrap(), CompleteOutcome::Published);
        assert_eq!(s.complete(&mut h0, &a.handle).unwrap(), CompleteOutcome::Superseded);
        s.release_private(&mut h0, &a.handle).unwrap();
        let c = s.census();
        assert_eq!(c.blocks["subgoal_frame"].0, 1);
        let mut h2 = s.heap(2);
        let l = s.lookup(&mut h2, p, &k).unwrap();
        assert_eq!(l.status, Status::Complete);
        assert_eq!(l.handle.frame, b.handle.frame);
    }

    #[test]
    fn mode_directed_max_and_invalidation() {
        let s = space(Design::Pas);
        let mut h = s.heap(0);
        let pred = PredId::new("best", 2);
        let p = s
            .register(&mut h, pred, Some(vec![Mode::Index, Mode::Max]))
            .unwrap();
        let k = canonicalize(&Term::compound("best", vec![Term::Int(1), Term::Var(0)])).unwrap();
        let l = s.lookup(&mut h, p, &k).unwrap().handle;
        let m = [Mode::Max];
        assert_eq!(s.mode_insert(&mut h, &l, &[], &[Term::Int(5)], &m).unwrap().0, ModeOutcome::Inserted);
        assert_eq!(s.mode_insert(&mut h, &l, &[], &[Term::Int(3)], &m).unwrap().0, ModeOutcome::Discarded);
        assert_eq!(s.mode_insert(&mut h, &l, &[], &[Term::Int(5)], &m).unwrap().0, ModeOutcome::Discarded);
        assert_eq!(s.mode_insert(&mut h, &l, &[], &[Term::Int(8)], &m).unwrap().0, ModeOutcome::Replaced);
        assert_eq!(s.answers(&l), vec![int(8)]);
        assert_eq!(s.answer_trie_stats(&l).nodes, 2);
        s.complete_and_release(&mut h, &l).unwrap();
        assert_eq!(s.answers(&l), vec![int(8)]);
        let c = s.census();
        assert!(c.cross_check(&s.heap_stats()).is_empty());
    }

    #[test]
    fn modes_rejected_for_shared_answer_designs() {
        for d in [Design::Fs, Design::Pac] {
            let s = space(d);
            let mut h = s.heap(0);
            let r = s.register(&mut h, PredId::new("q", 2), Some(vec![Mode::Index, Mode::Min]));
            assert!(matches!(r, Err(TableError::Unsupported(_))));
        }
    }

    #[test]
    fn abolish_refuses_with_workers() {
        let s = space(Design::Ss);
        let g = s.attach();
        let mut m = s.heap(1000);
        assert!(matches!(s.abolish(&mut m), Err(TableError::Contract(_))));
        drop(g);
        s.abolish(&mut m).unwrap();
    }

    #[test]
    fn many_threads_use_bucket_groups() {
        for d in [Design::Ss, Design::Fs, Design::Ns] {
            let s = space(d);
            let p = {
                let mut h = s.heap(0);
                s.register(&mut h, PredId::new("p", 1), None).unwrap()
            };
            let k = key(vec![Term::Var(0)]);
            std::thread::scope(|sc| {
                for t in 0..20u32 {
                    let s = &s;
                    let k = &k;
                    sc.spawn(move || {
                        let _g = s.attach();
                        let mut h = s.heap(t * 37 % 1024);
                        let l = s.lookup(&mut h, p, k).unwrap();
                        if l.status == Status::New {
                            for i in 0..50 {
                                s.record_answer(&mut h, &l.handle, &int(i)).unwrap();
                            }
                            s.complete_and_release(&mut h, &l.handle).unwrap();
                        }
                        let got: BTreeSet<_> = s.answers(&l.handle).into_iter().collect();
                        assert_eq!(got.len(), 50, "{d} thread {t} {:?}", l.status);
                    });
                }
            });
            let c = s.census();
            assert!(c.cross_check(&s.heap_stats()).is_empty(), "{d}");
            let mut m = s.heap(1023);
            s.abolish(&mut m).unwrap();
            assert_eq!(s.heap_stats().live_blocks(), 0);
        }
        let s = space(Design::Ss);
        let mut h = s.heap(0);
        let p = s.register(&mut h, PredId::new("p", 1), None).unwrap();
        let mut big = s.heap(5000);
        assert!(s.lookup(&mut big, p, &key(vec![Term::Var(0)])).is_err());
    }
}
