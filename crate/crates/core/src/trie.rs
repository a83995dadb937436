//! Concurrent tries keyed by token sequences.
//!
//! Children of a node start as a linked chain. When a chain grows past the
//! threshold it is converted into a hash mechanism, either a trie of
//! fixed-size hash levels (`HashScheme::HashTrie`) or a flat bucket array
//! that doubles (`HashScheme::Doubling`). Lookups never take a lock; insertion
//! appends with a single CAS. Nodes are never freed while other threads may
//! reach them, except through [`TrieSpace::remove_path`] on private tries.
//!
//! Expansion protocol, shared by both schemes: the expanding thread freezes a
//! chain by CASing the end marker of its last node to the new level, then
//! moves nodes one at a time from the tail to the end of their destination
//! chain, and finally points the bucket at the new level. Both an empty
//! bucket and a chain end are marked by a tagged pointer to the level that
//! owns them, so a reader reaching a marker of a deeper level knows the
//! chain was moved and re-indexes from the level just below its own.

use std::alloc::Layout;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicUsize, Ordering::*};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::pagealloc::{AllocError, Block, LocalHeap, StructType};
use crate::term::Token;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HashScheme {
    #[default]
    HashTrie,
    Doubling,
}

#[derive(Clone, Debug)]
pub struct TrieConfig {
    pub scheme: HashScheme,
    /// Chain length above which a hash mechanism is installed.
    pub threshold: usize,
    /// Initial bucket count for the doubling scheme.
    pub initial_size: usize,
    /// Bits per hash level for the hash-trie scheme.
    pub w: u32,
    pub hasher: fn(u64) -> u64,
}

impl Default for TrieConfig {
    fn default() -> Self {
        TrieConfig {
            scheme: HashScheme::HashTrie,
            threshold: 8,
            initial_size: 8,
            w: 3,
            hasher: mix64,
        }
    }
}

impl TrieConfig {
    pub fn with_scheme(scheme: HashScheme) -> Self {
        TrieConfig {
            scheme,
            ..Default::default()
        }
    }

    /// Block size of a hash-trie level.
    pub fn level_block_size(&self) -> usize {
        LEVEL_HEADER + 8 * (1usize << self.w)
    }
}

pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[repr(C)]
pub struct TrieNode {
    token: u64,
    parent: usize,
    child: AtomicUsize,
    next: AtomicUsize,
    aux: AtomicUsize,
}

pub const NODE_SIZE: usize = std::mem::size_of::<TrieNode>();

/// Pointer to a trie node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeRef(NonNull<TrieNode>);

unsafe impl Send for NodeRef {}
unsafe impl Sync for NodeRef {}

impl NodeRef {
    /// # Safety
    /// `addr` must point to a live trie node.
    pub unsafe fn from_addr(addr: usize) -> NodeRef {
        NodeRef(NonNull::new_unchecked(addr as *mut TrieNode))
    }

    pub fn addr(self) -> usize {
        self.0.as_ptr() as usize
    }

    fn node(&self) -> &TrieNode {
        unsafe { self.0.as_ref() }
    }

    pub fn word(self) -> u64 {
        self.node().token
    }

    pub fn token(self) -> Token {
        Token::from_word(self.word())
    }

    pub fn parent(self) -> Option<NodeRef> {
        let p = self.node().parent;
        (p != 0).then(|| unsafe { NodeRef::from_addr(p) })
    }

    /// Extra word: the answer chain link for answer leaves, the payload for
    /// subgoal leaves.
    pub fn aux(&self) -> &AtomicUsize {
        // SAFETY: the node outlives every NodeRef handed out.
        unsafe { &(*self.0.as_ptr()).aux }
    }

    pub fn has_children(self) -> bool {
        let mut any = false;
        for_each_child(self, &mut |_| any = true);
        any
    }
}

const LEVEL_HEADER: usize = 32;

#[repr(C)]
struct Level {
    prev: usize,
    depth: u32,
    log_size: u32,
    count: AtomicUsize,
    expanding: AtomicUsize,
    buckets: [AtomicUsize; 0],
}

impl Level {
    fn size(&self) -> usize {
        1 << self.log_size
    }

    fn bucket(&self, i: usize) -> &AtomicUsize {
        debug_assert!(i < self.size());
        unsafe { &*self.buckets.as_ptr().add(i) }
    }

    fn marker(&self) -> usize {
        self as *const Level as usize | 1
    }
}

#[inline]
fn is_level(w: usize) -> bool {
    w & 1 == 1
}

#[inline]
fn level<'a>(w: usize) -> &'a Level {
    unsafe { &*((w & !1) as *const Level) }
}

#[inline]
fn node<'a>(w: usize) -> &'a TrieNode {
    unsafe { &*(w as *const TrieNode) }
}

/// Ancestor of `l` at `depth`.
fn up_to(mut l: &Level, depth: u32) -> &Level {
    while l.depth > depth {
        l = level(l.prev | 1);
    }
    debug_assert_eq!(l.depth, depth);
    l
}

/// Backing store for doubling-scheme arrays; they are only released as a
/// whole because stale readers may still hold a superseded array.
#[derive(Default)]
pub struct LevelArena {
    blocks: Mutex<Vec<(usize, Layout)>>,
    bytes: AtomicUsize,
}

impl LevelArena {
    fn alloc(&self, log_size: u32) -> *mut Level {
        let bytes = LEVEL_HEADER + 8 * (1usize << log_size);
        let layout = Layout::from_size_align(bytes, 8).unwrap();
        let p = unsafe { std::alloc::alloc(layout) };
        if p.is_null() {
            std::alloc::handle_alloc_error(layout);
        }
        self.blocks.lock().push((p as usize, layout));
        self.bytes.fetch_add(bytes, Relaxed);
        p as *mut Level
    }

    pub fn bytes(&self) -> usize {
        self.bytes.load(Relaxed)
    }

    pub fn clear(&self) {
        let mut b = self.blocks.lock();
        for (p, l) in b.drain(..) {
            unsafe { std::alloc::dealloc(p as *mut u8, l) };
        }
        self.bytes.store(0, Relaxed);
    }
}

impl Drop for LevelArena {
    fn drop(&mut self) {
        self.clear();
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct TrieStats {
    /// Nodes including the root.
    pub nodes: u64,
    pub leaves: u64,
    pub levels: u64,
    pub level_bytes: u64,
    pub min_depth: u64,
    pub max_depth: u64,
    pub total_depth: u64,
}

impl TrieStats {
    pub fn add(&mut self, o: &TrieStats) {
        if o.leaves > 0 {
            self.min_depth = if self.leaves == 0 {
                o.min_depth
            } else {
                self.min_depth.min(o.min_depth)
            };
        }
        self.nodes += o.nodes;
        self.leaves += o.leaves;
        self.levels += o.levels;
        self.level_bytes += o.level_bytes;
        self.max_depth = self.max_depth.max(o.max_depth);
        self.total_depth += o.total_depth;
    }

    pub fn avg_depth(&self) -> f64 {
        if self.leaves == 0 {
            0.0
        } else {
            self.total_depth as f64 / self.leaves as f64
        }
    }
}

/// Node and level allocation context for one family of tries.
pub struct TrieSpace {
    cfg: TrieConfig,
    node_ty: StructType,
    level_ty: StructType,
    arena: LevelArena,
}

struct Spare(Option<NonNull<TrieNode>>);

impl TrieSpace {
    pub fn new(cfg: TrieConfig, node_ty: StructType, level_ty: StructType) -> Self {
        assert!(cfg.w >= 1 && cfg.w < 16);
        assert!(cfg.initial_size.is_power_of_two());
        TrieSpace {
            cfg,
            node_ty,
            level_ty,
            arena: LevelArena::default(),
        }
    }

    pub fn config(&self) -> &TrieConfig {
        &self.cfg
    }

    pub fn arena(&self) -> &LevelArena {
        &self.arena
    }

    pub fn node_type(&self) -> StructType {
        self.node_ty
    }

    fn level_bytes(&self, l: &Level) -> u64 {
        (LEVEL_HEADER + 8 * l.size()) as u64
    }

    fn alloc_node(
        &self,
        heap: &mut LocalHeap,
        word: u64,
        parent: usize,
    ) -> Result<NonNull<TrieNode>, AllocError> {
        let b = heap.alloc_block(self.node_ty)?;
        let p = b.as_ptr() as *mut TrieNode;
        unsafe {
            ptr::write(
                p,
                TrieNode {
                    token: word,
                    parent,
                    child: AtomicUsize::new(0),
                    next: AtomicUsize::new(0),
                    aux: AtomicUsize::new(0),
                },
            );
            Ok(NonNull::new_unchecked(p))
        }
    }

    pub fn new_root(&self, heap: &mut LocalHeap) -> Result<NodeRef, AllocError> {
        Ok(NodeRef(self.alloc_node(heap, 0, 0)?))
    }

    pub fn free_node(&self, heap: &mut LocalHeap, n: NodeRef) -> Result<(), AllocError> {
        heap.free_block(self.node_ty, unsafe { Block::from_raw(n.addr() as *mut u8) })
    }

    fn spare(
        &self,
        heap: &mut LocalHeap,
        s: &mut Spare,
        word: u64,
        parent: usize,
    ) -> Result<usize, AllocError> {
        if s.0.is_none() {
            s.0 = Some(self.alloc_node(heap, word, parent)?);
        }
        Ok(s.0.unwrap().as_ptr() as usize)
    }

    fn alloc_level(
        &self,
        heap: &mut LocalHeap,
        prev: usize,
        depth: u32,
        log_size: u32,
    ) -> Result<*mut Level, AllocError> {
        let p = match self.cfg.scheme {
            HashScheme::HashTrie => heap.alloc_block(self.level_ty)?.as_ptr() as *mut Level,
            HashScheme::Doubling => self.arena.alloc(log_size),
        };
        unsafe {
            ptr::write(
                p,
                Level {
                    prev,
                    depth,
                    log_size,
                    count: AtomicUsize::new(0),
                    expanding: AtomicUsize::new(0),
                    buckets: [],
                },
            );
            let l = &*p;
            let m = l.marker();
            for i in 0..l.size() {
                ptr::write(l.buckets.as_ptr().add(i) as *mut AtomicUsize, AtomicUsize::new(m));
            }
        }
        Ok(p)
    }

    fn free_level(&self, heap: &mut LocalHeap, l: *const Level) -> Result<(), AllocError> {
        if self.cfg.scheme == HashScheme::HashTrie {
            heap.free_block(self.level_ty, unsafe { Block::from_raw(l as *mut u8) })?;
        }
        Ok(())
    }

    #[inline]
    fn index(&self, l: &Level, h: u64) -> usize {
        match self.cfg.scheme {
            HashScheme::HashTrie => ((h >> (l.depth * self.cfg.w)) as usize) & (l.size() - 1),
            HashScheme::Doubling => (h as usize) & (l.size() - 1),
        }
    }

    #[inline]
    fn hash(&self, word: u64) -> u64 {
        (self.cfg.hasher)(word)
    }

    /// Inserts `tokens` below `root` unless present. Returns the leaf and
    /// whether this call created it.
    pub fn check_insert(
        &self,
        heap: &mut LocalHeap,
        root: NodeRef,
        tokens: &[Token],
    ) -> Result<(NodeRef, bool), AllocError> {
        let mut cur = root;
        let mut inserted = false;
        for t in tokens {
            let (n, i) = self.child_insert(heap, cur, t.to_word())?;
            cur = n;
            inserted = i;
        }
        Ok((cur, inserted))
    }

    pub fn lookup(&self, root: NodeRef, tokens: &[Token]) -> Option<NodeRef> {
        let mut cur = root;
        for t in tokens {
            cur = self.child_lookup(cur, t.to_word())?;
        }
        Some(cur)
    }

    pub fn child_lookup(&self, parent: NodeRef, word: u64) -> Option<NodeRef> {
        let h = self.hash(word);
        let head = parent.node().child.load(Acquire);
        if head == 0 {
            return None;
        }
        let mut l: &Level;
        if !is_level(head) {
            let mut cur = head;
            loop {
                let c = node(cur);
                if c.token == word {
                    return Some(unsafe { NodeRef::from_addr(cur) });
                }
                let nx = c.next.load(Acquire);
                if nx == 0 {
                    return None;
                }
                if is_level(nx) {
                    l = up_to(level(nx), 0);
                    break;
                }
                cur = nx;
            }
        } else {
            l = level(head);
        }
        'lvl: loop {
            let v = l.bucket(self.index(l, h)).load(Acquire);
            if is_level(v) {
                if level(v).marker() == l.marker() {
                    return None;
                }
                l = level(v);
                continue;
            }
            let mut cur = v;
            loop {
                let c = node(cur);
                if c.token == word {
                    return Some(unsafe { NodeRef::from_addr(cur) });
                }
                let nx = c.next.load(Acquire);
                if is_level(nx) {
                    if nx == l.marker() {
                        return None;
                    }
                    l = up_to(level(nx), l.depth + 1);
                    continue 'lvl;
                }
                cur = nx;
            }
        }
    }

    fn child_insert(
        &self,
        heap: &mut LocalHeap,
        parent: NodeRef,
        word: u64,
    ) -> Result<(NodeRef, bool), AllocError> {
        let mut spare = Spare(None);
        let r = self.child_insert_inner(heap, parent, word, &mut spare);
        if let (Ok((n, _)), Some(s)) = (&r, spare.0) {
            if s.as_ptr() as usize != n.addr() {
                self.free_node(heap, NodeRef(s))?;
            }
        }
        r
    }

    fn child_insert_inner(
        &self,
        heap: &mut LocalHeap,
        parent: NodeRef,
        word: u64,
        spare: &mut Spare,
    ) -> Result<(NodeRef, bool), AllocError> {
        let p = parent.node();
        let pa = parent.addr();
        let h = self.hash(word);
        let start: &Level;
        'outer: loop {
            let head = p.child.load(Acquire);
            if head == 0 {
                let n = self.spare(heap, spare, word, pa)?;
                node(n).next.store(0, Relaxed);
                if p.child.compare_exchange(0, n, AcqRel, Acquire).is_ok() {
                    return Ok((unsafe { NodeRef::from_addr(n) }, true));
                }
                continue;
            }
            if is_level(head) {
                start = level(head);
                break;
            }
            let mut cur = head;
            let mut count = 0;
            loop {
                let c = node(cur);
                if c.token == word {
                    return Ok((unsafe { NodeRef::from_addr(cur) }, false));
                }
                count += 1;
                let nx = c.next.load(Acquire);
                if nx == 0 {
                    let n = self.spare(heap, spare, word, pa)?;
                    node(n).next.store(0, Relaxed);
                    match c.next.compare_exchange(0, n, AcqRel, Acquire) {
                        Ok(_) => {
                            if count + 1 > self.cfg.threshold {
                                self.saturate_chain(heap, parent)?;
                            }
                            return Ok((unsafe { NodeRef::from_addr(n) }, true));
                        }
                        Err(a) if is_level(a) => {
                            start = up_to(level(a), 0);
                            break 'outer;
                        }
                        Err(a) => cur = a,
                    }
                } else if is_level(nx) {
                    start = up_to(level(nx), 0);
                    break 'outer;
                } else {
                    cur = nx;
                }
            }
        }
        self.level_insert(heap, parent, start, word, h, spare)
    }

    fn level_insert(
        &self,
        heap: &mut LocalHeap,
        parent: NodeRef,
        mut l: &Level,
        word: u64,
        h: u64,
        spare: &mut Spare,
    ) -> Result<(NodeRef, bool), AllocError> {
        let pa = parent.addr();
        'lvl: loop {
            let b = self.index(l, h);
            let slot = l.bucket(b);
            let head = slot.load(Acquire);
            if is_level(head) {
                if head == l.marker() {
                    let n = self.spare(heap, spare, word, pa)?;
                    node(n).next.store(l.marker(), Relaxed);
                    if slot.compare_exchange(head, n, AcqRel, Acquire).is_ok() {
                        l.count.fetch_add(1, Relaxed);
                        return Ok((unsafe { NodeRef::from_addr(n) }, true));
                    }
                } else {
                    l = level(head);
                }
                continue;
            }
            let mut cur = head;
            let mut count = 0;
            loop {
                let c = node(cur);
                if c.token == word {
                    return Ok((unsafe { NodeRef::from_addr(cur) }, false));
                }
                count += 1;
                let nx = c.next.load(Acquire);
                if !is_level(nx) {
                    cur = nx;
                    continue;
                }
                if nx != l.marker() {
                    l = up_to(level(nx), l.depth + 1);
                    continue 'lvl;
                }
                let n = self.spare(heap, spare, word, pa)?;
                node(n).next.store(l.marker(), Relaxed);
                match c.next.compare_exchange(nx, n, AcqRel, Acquire) {
                    Ok(_) => {
                        let total = l.count.fetch_add(1, Relaxed) + 1;
                        if count + 1 > self.cfg.threshold {
                            self.expand(heap, parent, l, b, total)?;
                        }
                        return Ok((unsafe { NodeRef::from_addr(n) }, true));
                    }
                    Err(a) if is_level(a) => {
                        l = up_to(level(a), l.depth + 1);
                        continue 'lvl;
                    }
                    Err(a) => cur = a,
                }
            }
        }
    }

    /// Converts the chain below `parent` into a hash mechanism.
    fn saturate_chain(&self, heap: &mut LocalHeap, parent: NodeRef) -> Result<(), AllocError> {
        let p = parent.node();
        let log = match self.cfg.scheme {
            HashScheme::HashTrie => self.cfg.w,
            HashScheme::Doubling => self.cfg.initial_size.trailing_zeros(),
        };
        let nl = self.alloc_level(heap, 0, 0, log)?;
        let n = unsafe { &*nl };
        // Freeze: the winner of the CAS on the chain end is the only expander.
        let mut cur = p.child.load(Acquire);
        loop {
            if cur == 0 || is_level(cur) {
                self.free_level(heap, nl)?;
                return Ok(());
            }
            let nx = node(cur).next.load(Acquire);
            if nx == 0 {
                match node(cur).next.compare_exchange(0, n.marker(), AcqRel, Acquire) {
                    Ok(_) => break,
                    Err(a) if is_level(a) => {
                        self.free_level(heap, nl)?;
                        return Ok(());
                    }
                    Err(a) => cur = a,
                }
            } else if is_level(nx) {
                self.free_level(heap, nl)?;
                return Ok(());
            } else {
                cur = nx;
            }
        }
        self.migrate_chain(&p.child, n);
        p.child.store(n.marker(), Release);
        Ok(())
    }

    /// Moves every node of the frozen chain starting at `slot` into `dst`,
    /// tail first.
    fn migrate_chain(&self, slot: &AtomicUsize, dst: &Level) {
        loop {
            let head = slot.load(Acquire);
            debug_assert!(head != 0 && !is_level(head));
            let first_next = node(head).next.load(Acquire);
            if is_level(first_next) {
                self.move_node(head, dst);
                return;
            }
            let mut prev = head;
            let mut last = first_next;
            loop {
                let nx = node(last).next.load(Acquire);
                if is_level(nx) {
                    break;
                }
                prev = last;
                last = nx;
            }
            self.move_node(last, dst);
            node(prev).next.store(dst.marker(), Release);
        }
    }

    /// Appends an existing node to the end of its chain below `dst`.
    fn move_node(&self, x: usize, dst: &Level) {
        let h = self.hash(node(x).token);
        let xn = node(x);
        let mut l = dst;
        'lvl: loop {
            let slot = l.bucket(self.index(l, h));
            let head = slot.load(Acquire);
            if is_level(head) {
                if head == l.marker() {
                    xn.next.store(l.marker(), Release);
                    if slot.compare_exchange(head, x, AcqRel, Acquire).is_ok() {
                        l.count.fetch_add(1, Relaxed);
                        return;
                    }
                } else {
                    l = level(head);
                }
                continue;
            }
            let mut cur = head;
            loop {
                let nx = node(cur).next.load(Acquire);
                if !is_level(nx) {
                    cur = nx;
                    continue;
                }
                if nx != l.marker() {
                    l = up_to(level(nx), l.depth + 1);
                    continue 'lvl;
                }
                xn.next.store(l.marker(), Release);
                match node(cur).next.compare_exchange(nx, x, AcqRel, Acquire) {
                    Ok(_) => {
                        l.count.fetch_add(1, Relaxed);
                        return;
                    }
                    Err(a) if is_level(a) => {
                        l = up_to(level(a), l.depth + 1);
                        continue 'lvl;
                    }
                    Err(a) => cur = a,
                }
            }
        }
    }

    fn expand(
        &self,
        heap: &mut LocalHeap,
        parent: NodeRef,
        l: &Level,
        b: usize,
        total: usize,
    ) -> Result<(), AllocError> {
        match self.cfg.scheme {
            HashScheme::HashTrie => self.expand_bucket(heap, l, b),
            HashScheme::Doubling => {
                if total > l.size() && parent.node().child.load(Acquire) == l.marker() {
                    self.double(heap, parent, l)
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Hash trie: pushes an overfull bucket one level down.
    fn expand_bucket(&self, heap: &mut LocalHeap, l: &Level, b: usize) -> Result<(), AllocError> {
        if (l.depth + 1) * self.cfg.w >= 64 {
            return Ok(());
        }
        let nl = self.alloc_level(heap, l as *const Level as usize, l.depth + 1, self.cfg.w)?;
        let n = unsafe { &*nl };
        if !self.freeze(l.bucket(b), l, n) {
            self.free_level(heap, nl)?;
            return Ok(());
        }
        self.migrate_chain(l.bucket(b), n);
        l.bucket(b).store(n.marker(), Release);
        Ok(())
    }

    /// CASes the end marker of the chain in `slot` from `l` to `n`.
    fn freeze(&self, slot: &AtomicUsize, l: &Level, n: &Level) -> bool {
        let mut cur = slot.load(Acquire);
        loop {
            if is_level(cur) {
                return false;
            }
            let nx = node(cur).next.load(Acquire);
            if nx == l.marker() {
                match node(cur).next.compare_exchange(nx, n.marker(), AcqRel, Acquire) {
                    Ok(_) => return true,
                    Err(a) if is_level(a) => return false,
                    Err(a) => cur = a,
                }
            } else if is_level(nx) {
                return false;
            } else {
                cur = nx;
            }
        }
    }

    /// Doubling: migrates every bucket of `l` into a twice-as-large array,
    /// then swings the parent's child pointer.
    fn double(&self, heap: &mut LocalHeap, parent: NodeRef, l: &Level) -> Result<(), AllocError> {
        if l.expanding.compare_exchange(0, 1, AcqRel, Acquire).is_err() {
            return Ok(());
        }
        let nl = self.alloc_level(heap, l as *const Level as usize, l.depth + 1, l.log_size + 1)?;
        let n = unsafe { &*nl };
        for i in 0..l.size() {
            let slot = l.bucket(i);
            loop {
                let head = slot.load(Acquire);
                if head == l.marker() {
                    if slot
                        .compare_exchange(head, n.marker(), AcqRel, Acquire)
                        .is_ok()
                    {
                        break;
                    }
                    continue;
                }
                if self.freeze(slot, l, n) {
                    self.migrate_chain(slot, n);
                    slot.store(n.marker(), Release);
                    break;
                }
            }
        }
        let _ = parent
            .node()
            .child
            .compare_exchange(l.marker(), n.marker(), AcqRel, Acquire);
        Ok(())
    }

    /// Frees every node (including the root) and level of a quiescent trie.
    pub fn free_trie(&self, heap: &mut LocalHeap, root: NodeRef) -> Result<u64, AllocError> {
        let mut freed = 0;
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            for_each_child(n, &mut |c| stack.push(c));
            self.free_levels_of(heap, n)?;
            self.free_node(heap, n)?;
            freed += 1;
        }
        Ok(freed)
    }

    fn free_levels_of(&self, heap: &mut LocalHeap, n: NodeRef) -> Result<(), AllocError> {
        let head = n.node().child.load(Acquire);
        if head != 0 && is_level(head) && self.cfg.scheme == HashScheme::HashTrie {
            let mut levels = Vec::new();
            collect_levels(level(head), &mut levels);
            for l in levels {
                self.free_level(heap, l)?;
            }
        }
        Ok(())
    }

    /// Private tries only: unlinks `leaf` and every ancestor left without
    /// children. The leaf itself is not freed. Returns the number of nodes
    /// freed.
    pub fn remove_path(&self, heap: &mut LocalHeap, leaf: NodeRef) -> Result<u64, AllocError> {
        let mut freed = 0;
        let mut cur = leaf;
        while let Some(p) = cur.parent() {
            self.unlink(p, cur);
            if cur != leaf {
                self.free_levels_of(heap, cur)?;
                self.free_node(heap, cur)?;
                freed += 1;
            }
            if p.has_children() || p.parent().is_none() {
                break;
            }
            cur = p;
        }
        Ok(freed)
    }

    fn unlink(&self, parent: NodeRef, x: NodeRef) {
        let p = parent.node();
        let xa = x.addr();
        let xn = x.node().next.load(Relaxed);
        let head = p.child.load(Relaxed);
        let slot: &AtomicUsize = if !is_level(head) {
            &p.child
        } else {
            let h = self.hash(x.word());
            let mut l = level(head);
            loop {
                let s = l.bucket(self.index(l, h));
                let v = s.load(Relaxed);
                if is_level(v) && v != l.marker() {
                    l = level(v);
                    continue;
                }
                break s;
            }
        };
        let v = slot.load(Relaxed);
        if v == xa {
            slot.store(xn, Release);
            return;
        }
        let mut cur = v;
        while cur != 0 && !is_level(cur) {
            let c = node(cur);
            let nx = c.next.load(Relaxed);
            if nx == xa {
                c.next.store(xn, Release);
                return;
            }
            cur = nx;
        }
        debug_assert!(false, "node not found under its parent");
    }

    /// Statistics of a quiescent trie.
    pub fn stats(&self, root: NodeRef) -> TrieStats {
        let mut s = TrieStats::default();
        let mut stack = vec![(root, 0u64)];
        while let Some((n, d)) = stack.pop() {
            s.nodes += 1;
            let head = n.node().child.load(Acquire);
            if head != 0 && is_level(head) {
                let mut ls = Vec::new();
                collect_levels(level(head), &mut ls);
                for l in ls {
                    s.levels += 1;
                    s.level_bytes += self.level_bytes(unsafe { &*l });
                }
            }
            let mut kids = 0;
            for_each_child(n, &mut |c| {
                kids += 1;
                stack.push((c, d + 1));
            });
            if kids == 0 && d > 0 {
                s.min_depth = if s.leaves == 0 { d } else { s.min_depth.min(d) };
                s.leaves += 1;
                s.max_depth = s.max_depth.max(d);
                s.total_depth += d;
            }
        }
        s
    }

    /// Leaves of a quiescent trie.
    pub fn leaves(&self, root: NodeRef) -> Vec<NodeRef> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            let mut kids = 0;
            for_each_child(n, &mut |c| {
                kids += 1;
                stack.push(c);
            });
            if kids == 0 && n != root {
                out.push(n);
            }
        }
        out
    }
}

fn collect_levels(l: &Level, out: &mut Vec<*const Level>) {
    out.push(l as *const Level);
    for i in 0..l.size() {
        let v = l.bucket(i).load(Acquire);
        if is_level(v) && v != l.marker() && level(v).prev == l as *const Level as usize {
            collect_levels(level(v), out);
        }
    }
}

fn walk_level(l: &Level, f: &mut dyn FnMut(NodeRef)) {
    for i in 0..l.size() {
        let v = l.bucket(i).load(Acquire);
        if is_level(v) {
            if v != l.marker() {
                walk_level(level(v), f);
            }
            continue;
        }
        let mut cur = v;
        while !is_level(cur) {
            f(unsafe { NodeRef::from_addr(cur) });
            cur = node(cur).next.load(Acquire);
        }
    }
}

/// Visits the children of a quiescent node.
pub fn for_each_child(n: NodeRef, f: &mut dyn FnMut(NodeRef)) {
    let head = n.node().child.load(Acquire);
    if head == 0 {
        return;
    }
    if is_level(head) {
        walk_level(level(head), f);
        return;
    }
    let mut cur = head;
    while cur != 0 && !is_level(cur) {
        f(unsafe { NodeRef::from_addr(cur) });
        cur = node(cur).next.load(Acquire);
    }
}

/// Token sequence from the root to `leaf`.
pub fn leaf_tokens(leaf: NodeRef) -> Vec<Token> {
    let mut out = Vec::new();
    leaf_words(leaf, &mut out);
    out.into_iter().map(Token::from_word).collect()
}

pub fn leaf_words(leaf: NodeRef, out: &mut Vec<u64>) {
    out.clear();
    let mut cur = leaf;
    while let Some(p) = cur.parent() {
        out.push(cur.word());
        cur = p;
    }
    out.reverse();
}
