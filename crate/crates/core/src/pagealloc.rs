//! Page-based allocator for fixed-size blocks.
//!
//! Every page holds blocks of exactly one structure type. Threads allocate
//! from a private [`LocalHeap`] without synchronisation and only touch the
//! global heap (under a mutex) when their local lists are empty. Pages come
//! from the host one at a time, carved out of aligned regions whose first
//! page(s) hold the page descriptors, so a block's descriptor is found by
//! masking its address.

use std::alloc::Layout;
use std::cell::Cell;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicPtr, AtomicU32, AtomicU64, AtomicUsize, Ordering::Relaxed};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub const GLOBAL_OWNER: u32 = u32::MAX;
const FREE_TYPE: u32 = u32::MAX;
const REGION_MAGIC: u64 = 0x7461_626b_6974_7067;
const CANARY: u64 = 0xdead_f7ee_b10c_cafe;

const ON_NONE: u32 = 0;
const ON_AVAIL: u32 = 1;
const ON_FULL: u32 = 2;
const ON_FREE: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocError {
    #[error("host refused to provide memory")]
    OutOfMemory,
    #[error("block is owned by thread {owner}, not by thread {caller}")]
    NotOwner { owner: u32, caller: u32 },
    #[error("block belongs to a page of type {found}, expected {expected}")]
    TypeMismatch { expected: u32, found: u32 },
    #[error("block freed twice")]
    DoubleFree,
    #[error("block was not allocated by this allocator")]
    ForeignBlock,
    #[error("unknown structure type {0}")]
    UnknownType(u16),
    #[error("invalid allocator configuration: {0}")]
    BadConfig(String),
}

/// Registered structure type.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct StructType(pub u16);

#[derive(Clone, Debug)]
pub struct TypeSpec {
    pub name: String,
    pub block_size: usize,
}

#[derive(Clone, Debug)]
pub struct AllocConfig {
    /// Payload bytes per page; a power of two.
    pub page_size: usize,
    /// Pages per host region (including descriptor pages); a power of two.
    pub region_pages: usize,
    /// Enables the double-free canary.
    pub debug: bool,
    /// Maximum number of regions the host will hand out; `None` = unbounded.
    pub host_limit: Option<usize>,
}

impl Default for AllocConfig {
    fn default() -> Self {
        AllocConfig {
            page_size: 4096,
            region_pages: 64,
            debug: cfg!(debug_assertions),
            host_limit: None,
        }
    }
}

#[repr(C)]
struct PageDesc {
    ty: AtomicU32,
    owner: AtomicU32,
    in_use: AtomicU32,
    bump: AtomicU32,
    list: AtomicU32,
    _pad: u32,
    free_head: AtomicUsize,
    next: AtomicPtr<PageDesc>,
    prev: AtomicPtr<PageDesc>,
    payload: usize,
}

#[repr(C)]
struct RegionHeader {
    magic: u64,
    alloc_id: u64,
}

/// Intrusive doubly-linked list of page descriptors.
struct PageList {
    head: *mut PageDesc,
    len: usize,
}

impl PageList {
    const fn new() -> Self {
        PageList {
            head: ptr::null_mut(),
            len: 0,
        }
    }

    unsafe fn push_front(&mut self, d: *mut PageDesc, tag: u32) {
        let dr = &*d;
        dr.prev.store(ptr::null_mut(), Relaxed);
        dr.next.store(self.head, Relaxed);
        if !self.head.is_null() {
            (*self.head).prev.store(d, Relaxed);
        }
        dr.list.store(tag, Relaxed);
        self.head = d;
        self.len += 1;
    }

    unsafe fn remove(&mut self, d: *mut PageDesc) {
        let dr = &*d;
        let p = dr.prev.load(Relaxed);
        let n = dr.next.load(Relaxed);
        if p.is_null() {
            self.head = n;
        } else {
            (*p).next.store(n, Relaxed);
        }
        if !n.is_null() {
            (*n).prev.store(p, Relaxed);
        }
        dr.next.store(ptr::null_mut(), Relaxed);
        dr.prev.store(ptr::null_mut(), Relaxed);
        dr.list.store(ON_NONE, Relaxed);
        self.len -= 1;
    }

    unsafe fn pop_front(&mut self) -> Option<*mut PageDesc> {
        if self.head.is_null() {
            None
        } else {
            let d = self.head;
            self.remove(d);
            Some(d)
        }
    }
}

struct TypeInfo {
    name: String,
    block_size: usize,
    capacity: u32,
}

struct HostState {
    regions: Vec<*mut u8>,
    /// Next unmaterialised page index in the newest region.
    next_page: usize,
    host_requests: u64,
}

struct GlobalState {
    avail: Vec<PageList>,
    full: Vec<PageList>,
    free: PageList,
}

// Raw pointers inside are only dereferenced under the owning lock or by the
// page's owner thread.
unsafe impl Send for HostState {}
unsafe impl Send for GlobalState {}

static NEXT_ALLOC_ID: AtomicU64 = AtomicU64::new(1);

pub struct PageAllocator {
    cfg: AllocConfig,
    id: u64,
    types: Vec<TypeInfo>,
    header_pages: usize,
    region_layout: Layout,
    host: Mutex<HostState>,
    global: Mutex<GlobalState>,
}

unsafe impl Send for PageAllocator {}
unsafe impl Sync for PageAllocator {}

/// Handle to an allocated block.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Block(NonNull<u8>);

impl Block {
    pub fn as_ptr(self) -> *mut u8 {
        self.0.as_ptr()
    }

    pub fn addr(self) -> usize {
        self.0.as_ptr() as usize
    }

    /// # Safety
    /// `p` must have been returned by [`LocalHeap::alloc_block`].
    pub unsafe fn from_raw(p: *mut u8) -> Block {
        Block(NonNull::new_unchecked(p))
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct TypeStats {
    pub name: String,
    pub block_size: usize,
    pub local_pages: u64,
    pub global_pages: u64,
    pub live_blocks: u64,
    pub live_bytes: u64,
    /// Unusable tail bytes summed over this type's pages.
    pub wasted_bytes: u64,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct HeapStats {
    pub types: Vec<TypeStats>,
    pub free_pages: u64,
    pub total_pages: u64,
    pub host_requests: u64,
    pub page_size: usize,
}

impl HeapStats {
    pub fn live_blocks(&self) -> u64 {
        self.types.iter().map(|t| t.live_blocks).sum()
    }

    pub fn live_bytes(&self) -> u64 {
        self.types.iter().map(|t| t.live_bytes).sum()
    }

    pub fn typed_pages(&self) -> u64 {
        self.types.iter().map(|t| t.local_pages + t.global_pages).sum()
    }
}

impl PageAllocator {
    pub fn new(cfg: AllocConfig, types: &[TypeSpec]) -> Result<Arc<Self>, AllocError> {
        if !cfg.page_size.is_power_of_two() || cfg.page_size < 64 {
            return Err(AllocError::BadConfig("page size must be a power of two >= 64".into()));
        }
        if !cfg.region_pages.is_power_of_two() || cfg.region_pages < 2 {
            return Err(AllocError::BadConfig("region pages must be a power of two >= 2".into()));
        }
        if types.len() >= u16::MAX as usize {
            return Err(AllocError::BadConfig("too many structure types".into()));
        }
        let desc_bytes = std::mem::size_of::<RegionHeader>()
            + cfg.region_pages * std::mem::size_of::<PageDesc>();
        let header_pages = desc_bytes.div_ceil(cfg.page_size);
        if header_pages >= cfg.region_pages {
            return Err(AllocError::BadConfig("region too small for its descriptors".into()));
        }
        let mut infos = Vec::with_capacity(types.len());
        for t in types {
            let bs = t.block_size.max(8).next_multiple_of(8);
            if bs > cfg.page_size {
                return Err(AllocError::BadConfig(format!(
                    "block size {} of {} exceeds page size",
                    bs, t.name
                )));
            }
            infos.push(TypeInfo {
                name: t.name.clone(),
                block_size: bs,
                capacity: (cfg.page_size / bs) as u32,
            });
        }
        let region_bytes = cfg.page_size * cfg.region_pages;
        let region_layout = Layout::from_size_align(region_bytes, region_bytes)
            .map_err(|e| AllocError::BadConfig(e.to_string()))?;
        let n = infos.len();
        Ok(Arc::new(PageAllocator {
            id: NEXT_ALLOC_ID.fetch_add(1, Relaxed),
            header_pages,
            region_layout,
            host: Mutex::new(HostState {
                regions: Vec::new(),
                next_page: usize::MAX,
                host_requests: 0,
            }),
            global: Mutex::new(GlobalState {
                avail: (0..n).map(|_| PageList::new()).collect(),
                full: (0..n).map(|_| PageList::new()).collect(),
                free: PageList::new(),
            }),
            types: infos,
            cfg,
        }))
    }

    pub fn config(&self) -> &AllocConfig {
        &self.cfg
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn block_size(&self, ty: StructType) -> usize {
        self.types[ty.0 as usize].block_size
    }

    pub fn type_name(&self, ty: StructType) -> &str {
        &self.types[ty.0 as usize].name
    }

    pub fn local_heap(self: &Arc<Self>, tid: u32) -> LocalHeap {
        let n = self.types.len();
        LocalHeap {
            alloc: self.clone(),
            tid,
            avail: (0..n).map(|_| PageList::new()).collect(),
            full: (0..n).map(|_| PageList::new()).collect(),
            free: PageList::new(),
            steps: Cell::new(0),
        }
    }

    fn region_bytes(&self) -> usize {
        self.region_layout.size()
    }

    unsafe fn desc_at(&self, region: *mut u8, idx: usize) -> *mut PageDesc {
        (region.add(std::mem::size_of::<RegionHeader>()) as *mut PageDesc).add(idx)
    }

    /// Descriptor of the page containing `addr`.
    unsafe fn desc_of(&self, addr: usize) -> Result<*mut PageDesc, AllocError> {
        let base = addr & !(self.region_bytes() - 1);
        let hdr = &*(base as *const RegionHeader);
        if hdr.magic != REGION_MAGIC || hdr.alloc_id != self.id {
            return Err(AllocError::ForeignBlock);
        }
        let page = (addr - base) / self.cfg.page_size;
        if page < self.header_pages {
            return Err(AllocError::ForeignBlock);
        }
        Ok(self.desc_at(base as *mut u8, page - self.header_pages))
    }

    /// Materialises one fresh FREE page from the host.
    fn host_page(&self) -> Result<*mut PageDesc, AllocError> {
        let mut h = self.host.lock();
        let per_region = self.cfg.region_pages - self.header_pages;
        if h.regions.is_empty() || h.next_page >= per_region {
            if let Some(limit) = self.cfg.host_limit {
                if h.regions.len() >= limit {
                    return Err(AllocError::OutOfMemory);
                }
            }
            let r = unsafe { std::alloc::alloc(self.region_layout) };
            if r.is_null() {
                return Err(AllocError::OutOfMemory);
            }
            unsafe {
                ptr::write(
                    r as *mut RegionHeader,
                    RegionHeader {
                        magic: REGION_MAGIC,
                        alloc_id: self.id,
                    },
                );
            }
            h.regions.push(r);
            h.next_page = 0;
            h.host_requests += 1;
        }
        let region = *h.regions.last().unwrap();
        let idx = h.next_page;
        h.next_page += 1;
        unsafe {
            let d = self.desc_at(region, idx);
            ptr::write(
                d,
                PageDesc {
                    ty: AtomicU32::new(FREE_TYPE),
                    owner: AtomicU32::new(GLOBAL_OWNER),
                    in_use: AtomicU32::new(0),
                    bump: AtomicU32::new(0),
                    list: AtomicU32::new(ON_NONE),
                    _pad: 0,
                    free_head: AtomicUsize::new(0),
                    next: AtomicPtr::new(ptr::null_mut()),
                    prev: AtomicPtr::new(ptr::null_mut()),
                    payload: region as usize + (self.header_pages + idx) * self.cfg.page_size,
                },
            );
            Ok(d)
        }
    }

    fn for_each_page(&self, mut f: impl FnMut(&PageDesc)) -> (u64, u64) {
        let h = self.host.lock();
        let per_region = self.cfg.region_pages - self.header_pages;
        let mut total = 0;
        for (i, &r) in h.regions.iter().enumerate() {
            let n = if i + 1 == h.regions.len() {
                h.next_page
            } else {
                per_region
            };
            for k in 0..n {
                unsafe { f(&*self.desc_at(r, k)) };
                total += 1;
            }
        }
        (total, h.host_requests)
    }

    /// Snapshot of page and block usage per structure type.
    pub fn heap_stats(&self) -> HeapStats {
        let mut types: Vec<TypeStats> = self
            .types
            .iter()
            .map(|t| TypeStats {
                name: t.name.clone(),
                block_size: t.block_size,
                ..Default::default()
            })
            .collect();
        let mut free_pages = 0;
        let page_size = self.cfg.page_size;
        let (total, host_requests) = self.for_each_page(|d| {
            let ty = d.ty.load(Relaxed);
            if ty == FREE_TYPE {
                free_pages += 1;
                return;
            }
            let info = &self.types[ty as usize];
            let s = &mut types[ty as usize];
            if d.owner.load(Relaxed) == GLOBAL_OWNER {
                s.global_pages += 1;
            } else {
                s.local_pages += 1;
            }
            let live = d.in_use.load(Relaxed) as u64;
            s.live_blocks += live;
            s.live_bytes += live * info.block_size as u64;
            s.wasted_bytes += (page_size - info.capacity as usize * info.block_size) as u64;
        });
        HeapStats {
            types,
            free_pages,
            total_pages: total,
            host_requests,
            page_size,
        }
    }

    /// Returns every empty global page of any type to the FREE pool.
    pub fn reclaim_global(&self) -> usize {
        let mut g = self.global.lock();
        let g = &mut *g;
        let mut n = 0;
        for t in 0..self.types.len() {
            let mut d = g.avail[t].head;
            while !d.is_null() {
                let next = unsafe { (*d).next.load(Relaxed) };
                unsafe {
                    if (*d).in_use.load(Relaxed) == 0 {
                        g.avail[t].remove(d);
                        reset_free(d);
                        g.free.push_front(d, ON_FREE);
                        n += 1;
                    }
                }
                d = next;
            }
        }
        n
    }
}

impl Drop for PageAllocator {
    fn drop(&mut self) {
        let h = self.host.get_mut();
        for &r in &h.regions {
            unsafe { std::alloc::dealloc(r, self.region_layout) };
        }
    }
}

unsafe fn reset_free(d: *mut PageDesc) {
    let d = &*d;
    d.ty.store(FREE_TYPE, Relaxed);
    d.in_use.store(0, Relaxed);
    d.bump.store(0, Relaxed);
    d.free_head.store(0, Relaxed);
}

/// Per-thread heap. Not shareable; ownership of its pages travels with it.
pub struct LocalHeap {
    alloc: Arc<PageAllocator>,
    tid: u32,
    avail: Vec<PageList>,
    full: Vec<PageList>,
    free: PageList,
    steps: Cell<u64>,
}

// A heap may be moved to another thread (e.g. handed to a worker); its pages
// move with it.
unsafe impl Send for LocalHeap {}

impl LocalHeap {
    pub fn tid(&self) -> u32 {
        self.tid
    }

    pub fn allocator(&self) -> &Arc<PageAllocator> {
        &self.alloc
    }

    /// Bookkeeping steps taken so far (list edits and slot operations).
    pub fn steps(&self) -> u64 {
        self.steps.get()
    }

    fn step(&self, n: u64) {
        self.steps.set(self.steps.get() + n);
    }

    pub fn local_page_count(&self) -> usize {
        self.avail.iter().chain(self.full.iter()).map(|l| l.len).sum::<usize>() + self.free.len
    }

    unsafe fn format(&self, d: *mut PageDesc, ty: u32) {
        let dr = &*d;
        dr.ty.store(ty, Relaxed);
        dr.owner.store(self.tid, Relaxed);
        dr.in_use.store(0, Relaxed);
        dr.bump.store(0, Relaxed);
        dr.free_head.store(0, Relaxed);
    }

    pub fn alloc_block(&mut self, ty: StructType) -> Result<Block, AllocError> {
        let t = ty.0 as usize;
        if t >= self.alloc.types.len() {
            return Err(AllocError::UnknownType(ty.0));
        }
        loop {
            let d = self.avail[t].head;
            if !d.is_null() {
                return Ok(unsafe { self.take_slot(d, t) });
            }
            self.refill(t)?;
        }
    }

    unsafe fn take_slot(&mut self, d: *mut PageDesc, t: usize) -> Block {
        let info = &self.alloc.types[t];
        let dr = &*d;
        let head = dr.free_head.load(Relaxed);
        let p = if head != 0 {
            let next = *(head as *const usize);
            dr.free_head.store(next, Relaxed);
            head
        } else {
            let b = dr.bump.load(Relaxed);
            debug_assert!(b < info.capacity);
            dr.bump.store(b + 1, Relaxed);
            dr.payload + b as usize * info.block_size
        };
        let used = dr.in_use.load(Relaxed) + 1;
        dr.in_use.store(used, Relaxed);
        self.step(1);
        if used == info.capacity {
            self.avail[t].remove(d);
            self.full[t].push_front(d, ON_FULL);
            self.step(2);
        }
        if self.alloc.cfg.debug && info.block_size >= 16 {
            *(p as *mut u64).add(1) = 0;
        }
        Block(NonNull::new_unchecked(p as *mut u8))
    }

    fn refill(&mut self, t: usize) -> Result<(), AllocError> {
        unsafe {
            if let Some(d) = self.free.pop_front() {
                self.format(d, t as u32);
                self.avail[t].push_front(d, ON_AVAIL);
                self.step(2);
                return Ok(());
            }
            {
                let mut g = self.alloc.global.lock();
                if let Some(d) = g.avail[t].pop_front() {
                    (*d).owner.store(self.tid, Relaxed);
                    self.avail[t].push_front(d, ON_AVAIL);
                    self.step(2);
                    return Ok(());
                }
                if let Some(d) = g.free.pop_front() {
                    self.format(d, t as u32);
                    self.avail[t].push_front(d, ON_AVAIL);
                    self.step(2);
                    return Ok(());
                }
            }
            let d = self.alloc.host_page()?;
            self.format(d, t as u32);
            self.avail[t].push_front(d, ON_AVAIL);
            self.step(1);
            Ok(())
        }
    }

    pub fn free_block(&mut self, ty: StructType, b: Block) -> Result<(), AllocError> {
        let t = ty.0 as usize;
        if t >= self.alloc.types.len() {
            return Err(AllocError::UnknownType(ty.0));
        }
        unsafe {
            let d = self.alloc.desc_of(b.addr())?;
            let dr = &*d;
            let owner = dr.owner.load(Relaxed);
            if owner != self.tid {
                return Err(AllocError::NotOwner {
                    owner,
                    caller: self.tid,
                });
            }
            let found = dr.ty.load(Relaxed);
            if found == FREE_TYPE {
                return Err(AllocError::DoubleFree);
            }
            if found != t as u32 {
                return Err(AllocError::TypeMismatch {
                    expected: t as u32,
                    found,
                });
            }
            let info = &self.alloc.types[t];
            if (b.addr() - dr.payload) % info.block_size != 0 {
                return Err(AllocError::ForeignBlock);
            }
            if self.alloc.cfg.debug && info.block_size >= 16 {
                let c = (b.addr() as *mut u64).add(1);
                if *c == CANARY {
                    return Err(AllocError::DoubleFree);
                }
                *c = CANARY;
            }
            *(b.addr() as *mut usize) = dr.free_head.load(Relaxed);
            dr.free_head.store(b.addr(), Relaxed);
            let used = dr.in_use.load(Relaxed) - 1;
            dr.in_use.store(used, Relaxed);
            self.step(1);
            match dr.list.load(Relaxed) {
                ON_FULL => {
                    self.full[t].remove(d);
                    if used == 0 {
                        reset_free(d);
                        self.free.push_front(d, ON_FREE);
                    } else {
                        self.avail[t].push_front(d, ON_AVAIL);
                    }
                    self.step(2);
                }
                ON_AVAIL if used == 0 => {
                    self.avail[t].remove(d);
                    reset_free(d);
                    self.free.push_front(d, ON_FREE);
                    self.step(2);
                }
                _ => {}
            }
            Ok(())
        }
    }

    /// Takes ownership of every global page of type `ty`.
    pub fn adopt_pages(&mut self, ty: StructType) -> usize {
        let t = ty.0 as usize;
        let mut g = self.alloc.global.lock();
        let mut n = 0;
        unsafe {
            while let Some(d) = g.avail[t].pop_front() {
                (*d).owner.store(self.tid, Relaxed);
                self.avail[t].push_front(d, ON_AVAIL);
                n += 1;
            }
            while let Some(d) = g.full[t].pop_front() {
                (*d).owner.store(self.tid, Relaxed);
                self.full[t].push_front(d, ON_FULL);
                n += 1;
            }
        }
        n
    }

    /// Adopts the global pages of every type.
    pub fn adopt_all(&mut self) -> usize {
        (0..self.alloc.types.len())
            .map(|t| self.adopt_pages(StructType(t as u16)))
            .sum()
    }

    /// Hands every page to the global heap. Also happens on drop.
    pub fn release(self) {
        drop(self)
    }

    fn release_pages(&mut self) {
        let mut g = self.alloc.global.lock();
        let g = &mut *g;
        unsafe {
            for t in 0..self.avail.len() {
                while let Some(d) = self.avail[t].pop_front() {
                    (*d).owner.store(GLOBAL_OWNER, Relaxed);
                    g.avail[t].push_front(d, ON_AVAIL);
                }
                while let Some(d) = self.full[t].pop_front() {
                    (*d).owner.store(GLOBAL_OWNER, Relaxed);
                    g.full[t].push_front(d, ON_FULL);
                }
            }
            while let Some(d) = self.free.pop_front() {
                (*d).owner.store(GLOBAL_OWNER, Relaxed);
                g.free.push_front(d, ON_FREE);
            }
        }
    }
}

impl Drop for LocalHeap {
    fn drop(&mut self) {
        self.release_pages();
    }
}

/// Convenience wrapper owning a single release at end of thread.
pub fn release_thread(heap: LocalHeap) {
    heap.release();
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alloc(debug: bool) -> Arc<PageAllocator> {
        PageAllocator::new(
            AllocConfig {
                debug,
                ..Default::default()
            },
            &[
                TypeSpec {
                    name: "small".into(),
                    block_size: 64,
                },
                TypeSpec {
                    name: "big".into(),
                    block_size: 200,
                },
            ],
        )
        .unwrap()
    }

    const SMALL: StructType = StructType(0);
    const BIG: StructType = StructType(1);

    #[test]
    fn first_alloc_takes_one_page() {
        let a = alloc(true);
        let mut h = a.local_heap(0);
        h.alloc_block(SMALL).unwrap();
        let s = a.heap_stats();
        assert_eq!(s.types[0].local_pages, 1);
        assert_eq!(s.free_pages, 0);
        assert_eq!(s.host_requests, 1);
    }

    #[test]
    fn hundred_blocks_two_pages() {
        let a = alloc(true);
        let mut h = a.local_heap(0);
        let blocks: Vec<_> = (0..100).map(|_| h.alloc_block(SMALL).unwrap()).collect();
        let mut addrs: Vec<_> = blocks.iter().map(|b| b.addr()).collect();
        addrs.sort();
        addrs.dedup();
        assert_eq!(addrs.len(), 100);
        assert_eq!(a.heap_stats().types[0].local_pages, 2);
        assert_eq!(h.local_page_count(), 2);
    }

    #[test]
    fn foreign_free_rejected() {
        let a = alloc(true);
        let mut h0 = a.local_heap(0);
        let mut h1 = a.local_heap(1);
        let b = h0.alloc_block(SMALL).unwrap();
        assert!(matches!(h1.free_block(SMALL, b), Err(AllocError::NotOwner { .. })));
        assert!(matches!(h0.free_block(BIG, b), Err(AllocError::TypeMismatch { .. })));
        h0.free_block(SMALL, b).unwrap();
        assert_eq!(h0.free_block(SMALL, b), Err(AllocError::DoubleFree));
    }

    #[test]
    fn release_then_adopt() {
        let a = alloc(false);
        let mut h0 = a.local_heap(0);
        let bs: Vec<_> = (0..70).map(|_| h0.alloc_block(SMALL).unwrap()).collect();
        h0.release();
        let s = a.heap_stats();
        assert_eq!(s.types[0].global_pages, 2);
        assert_eq!(s.types[0].local_pages, 0);
        let mut m = a.local_heap(9);
        assert_eq!(m.adopt_pages(SMALL), 2);
        for b in bs {
            m.free_block(SMALL, b).unwrap();
        }
        let s = a.heap_stats();
        assert_eq!(s.live_blocks(), 0);
        assert_eq!(s.free_pages, 2);
    }

    #[test]
    fn global_typed_page_reused_before_free_page() {
        let a = alloc(false);
        let mut h0 = a.local_heap(0);
        let b = h0.alloc_block(SMALL).unwrap();
        let _keep = h0.alloc_block(SMALL).unwrap();
        h0.free_block(SMALL, b).unwrap();
        drop(h0);
        let mut h1 = a.local_heap(1);
        let before = a.heap_stats().total_pages;
        h1.alloc_block(SMALL).unwrap();
        let s = a.heap_stats();
        assert_eq!(s.total_pages, before);
        assert_eq!(s.types[0].local_pages, 1);
        assert_eq!(s.types[0].live_blocks, 2);
    }

    #[test]
    fn host_limit_reports_oom() {
        let a = PageAllocator::new(
            AllocConfig {
                host_limit: Some(1),
                region_pages: 4,
                ..Default::default()
            },
            &[TypeSpec {
                name: "page".into(),
                block_size: 4096,
            }],
        )
        .unwrap();
        let mut h = a.local_heap(0);
        for _ in 0..3 {
            h.alloc_block(StructType(0)).unwrap();
        }
        assert_eq!(h.alloc_block(StructType(0)), Err(AllocError::OutOfMemory));
    }

    #[test]
    fn bad_config() {
        assert!(PageAllocator::new(
            AllocConfig {
                page_size: 1000,
                ..Default::default()
            },
            &[]
        )
        .is_err());
        assert!(PageAllocator::new(
            AllocConfig::default(),
            &[TypeSpec {
                name: "huge".into(),
                block_size: 5000
            }]
        )
        .is_err());
    }

    #[test]
    fn constant_steps_per_operation() {
        // Per-op bookkeeping does not grow with the number of pages held.
        let a = alloc(false);
        let mut h = a.local_heap(0);
        let mut worst = 0;
        let mut live = Vec::new();
        for round in 0..3 {
            for _ in 0..(1000 * (round + 1)) {
                let s = h.steps();
                live.push(h.alloc_block(SMALL).unwrap());
                worst = worst.max(h.steps() - s);
            }
            for b in live.drain(..).rev() {
                let s = h.steps();
                h.free_block(SMALL, b).unwrap();
                worst = worst.max(h.steps() - s);
            }
        }
        assert!(worst <= 5, "worst {worst}");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Alloc(u8, bool),
        Free(u8, usize),
        Release(u8),
        Adopt(u8, bool),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            6 => (0u8..3, any::<bool>()).prop_map(|(h, t)| Op::Alloc(h, t)),
            5 => (0u8..3, any::<usize>()).prop_map(|(h, i)| Op::Free(h, i)),
            1 => (0u8..3).prop_map(Op::Release),
            1 => (0u8..3, any::<bool>()).prop_map(|(h, t)| Op::Adopt(h, t)),
        ]
    }

    proptest! {
        #[test]
        fn page_conservation_and_purity(ops in prop::collection::vec(op(), 1..300)) {
            let a = alloc(true);
            let mut heaps: Vec<LocalHeap> = (0..3).map(|t| a.local_heap(t)).collect();
            let mut live: Vec<(StructType, Block)> = Vec::new();
            let mut last_total = 0;
            for o in ops {
                match o {
                    Op::Alloc(h, t) => {
                        let ty = if t { SMALL } else { BIG };
                        live.push((ty, heaps[h as usize].alloc_block(ty).unwrap()));
                    }
                    Op::Free(h, i) => {
                        if !live.is_empty() {
                            let k = i % live.len();
                            let (ty, b) = live[k];
                            let owner = unsafe { (*a.desc_of(b.addr()).unwrap()).owner.load(Relaxed) };
                            let r = heaps[h as usize].free_block(ty, b);
                            if owner == h as u32 {
                                prop_assert!(r.is_ok());
                                live.swap_remove(k);
                            } else {
                                let is_not_owner = matches!(r, Err(AllocError::NotOwner { .. }));
                                prop_assert!(is_not_owner);
                            }
                        }
                    }
                    Op::Release(h) => {
                        let old = std::mem::replace(&mut heaps[h as usize], a.local_heap(h as u32));
                        old.release();
                    }
                    Op::Adopt(h, t) => {
                        heaps[h as usize].adopt_pages(if t { SMALL } else { BIG });
                    }
                }
                let s = a.heap_stats();
                prop_assert!(s.total_pages >= last_total);
                last_total = s.total_pages;
                prop_assert_eq!(s.typed_pages() + s.free_pages, s.total_pages);
                prop_assert_eq!(s.live_blocks(), live.len() as u64);
                for (ty, b) in &live {
                    let d = unsafe { &*a.desc_of(b.addr()).unwrap() };
                    prop_assert_eq!(d.ty.load(Relaxed), ty.0 as u32);
                }
            }
        }
    }

    #[test]
    fn concurrent_heaps() {
        let a = alloc(true);
        std::thread::scope(|s| {
            for t in 0..4 {
                let a = a.clone();
                s.spawn(move || {
                    let mut h = a.local_heap(t);
                    let mut v = Vec::new();
                    for i in 0..5000 {
                        v.push(h.alloc_block(if i % 3 == 0 { BIG } else { SMALL }).unwrap());
                        if i % 4 == 0 {
                            let b = v.swap_remove(0);
                            let d = unsafe { &*a.desc_of(b.addr()).unwrap() };
                            let ty = StructType(d.ty.load(Relaxed) as u16);
                            h.free_block(ty, b).unwrap();
                        }
                    }
                });
            }
        });
        let s = a.heap_stats();
        assert_eq!(s.live_blocks(), 4 * (5000 - 1250));
        assert_eq!(s.typed_pages() + s.free_pages, s.total_pages);
    }
}
