//! The object heap: a lock-free dynamic allocator for structure-of-arrays
//! objects.
//!
//! # Model
//!
//! The heap is a fixed arena of equal-size blocks (see [`crate::block`]).
//! Each block holds up to 64 objects of a single runtime type in SOA layout:
//! one contiguous array per field, so a do-all pass touching field `x` of
//! many objects streams through memory. Types are registered up front on the
//! [`SoaHeapBuilder`]; a block's capacity is derived from its type's object
//! size so that small-object blocks and large-object blocks cover the same
//! byte range.
//!
//! Three groups of hierarchical bitmaps (one bit per block) index the arena:
//!
//! * `free` — blocks owned by no type,
//! * `allocated[t]` — blocks holding objects of type `t`,
//! * `active[t]` — allocated blocks of `t` with at least one free slot.
//!
//! # Allocation
//!
//! [`SoaHeap::allocate`] first makes a bounded number of attempts to find an
//! active block of the requested type (fast path). If none is visible it
//! claims a free block, initializes it, and publishes it (slow path). Either
//! way it then reserves a slot by atomically setting a bit in the block's
//! allocation bitmap. Because a block may be reclaimed and reused for a
//! different type between lookup and reservation, the allocator re-reads the
//! block's type afterwards and rolls the slot back (as a deallocation of the
//! *actual* type) if it changed — the state the thread acted on was stale,
//! but every individual transition stays valid, which is what makes the whole
//! scheme lock-free rather than locked.
//!
//! # Reclamation
//!
//! Freeing the last object of a block triggers *invalidation*: the
//! deallocating thread atomically sets all 64 allocation bits. If it caught
//! the block still empty, the block can never satisfy another reservation and
//! is returned to the free bitmap; otherwise the bits are rolled back and the
//! block stays live. A fully-set bitmap is exactly the state of a *full*
//! block, so concurrent allocators never need to distinguish "full" from
//! "being reclaimed" — both simply fail the reservation. The deallocation
//! protocol resolves the one genuine ambiguity (a free happening inside an
//! invalidation window) by handing the block-activation duty back and forth;
//! see [`SoaHeap::try_invalidate`].
//!
//! # Field access
//!
//! Object data is reached through [`ObjectHandle`]s, which encode type,
//! block, capacity, and slot. [`SoaHeap::read_field`]/[`SoaHeap::write_field`]
//! turn a handle plus field index into a relaxed atomic access of the field's
//! exact width. Accesses through stale handles (freed, or freed-and-reused
//! memory) may observe garbage — that is an application-level logic bug — but
//! they are always in-bounds, aligned, and race-free at the machine level, so
//! no undefined behavior can result. Field data is **not** zeroed on
//! allocation: constructors run via [`SoaHeap::allocate_with`] (or the
//! initializer of a bulk create) must set every field they later read.

use std::sync::atomic::{AtomicU16, AtomicU32, AtomicU64, AtomicU8, Ordering::Relaxed, Ordering::SeqCst};
use std::thread;

use crate::bitmap::{BitmapInit, HierarchicalBitmap};
use crate::block::{padding_mask, Arena, DeallocState, FillState, HEADER_BYTES};
use crate::error::{AllocError, BulkNewError, ConfigError};
use crate::handle::ObjectHandle;
use crate::types::{TypeDescriptor, TypeRegistry};

/// What [`SoaHeap::allocate`] does when the heap is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnOom {
    /// Return [`AllocError::OutOfMemory`] after a bounded number of retry
    /// rounds (a round can fail transiently while other threads hold blocks
    /// in flight, so a few rounds are always attempted).
    #[default]
    Error,
    /// Spin until a competing thread frees capacity. Matches the behavior of
    /// a device-side allocator with nowhere to report failure; can livelock
    /// if nothing is ever freed.
    Spin,
}

/// Full outer-loop failures tolerated before reporting out-of-memory.
const OOM_RETRY_ROUNDS: u32 = 8;

/// Per-thread seed for bitmap rotation, so concurrent threads start their
/// searches at different positions and interleave instead of colliding.
fn thread_seed() -> u64 {
    use std::cell::Cell;
    static NEXT_THREAD: AtomicU64 = AtomicU64::new(0x9E37_79B9_7F4A_7C15);
    thread_local! {
        static SEED: Cell<u64> =
            Cell::new(NEXT_THREAD.fetch_add(0x9E37_79B9_7F4A_7C15, Relaxed));
    }
    SEED.with(|s| {
        let mut z = s.get().wrapping_add(0x9E37_79B9_7F4A_7C15);
        s.set(z);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

enum Sizing {
    Bytes(usize),
    Blocks(usize),
}

/// Configures and constructs a [`SoaHeap`].
///
/// ```
/// use soa_heap::SoaHeap;
///
/// let mut b = SoaHeap::builder();
/// let point = b.register_type("point", &[4, 4]).unwrap();
/// b.heap_blocks(16);
/// let heap = b.build().unwrap();
/// let h = heap.allocate(point).unwrap();
/// heap.write_field::<f32>(h, 0, 1.5);
/// assert_eq!(heap.read_field::<f32>(h, 0), 1.5);
/// ```
pub struct SoaHeapBuilder {
    registry: TypeRegistry,
    sizing: Sizing,
    lane_width: u32,
    alloc_retries: u32,
    workers: usize,
    seed: u64,
    on_oom: OnOom,
}

impl Default for SoaHeapBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl SoaHeapBuilder {
    pub fn new() -> Self {
        SoaHeapBuilder {
            registry: TypeRegistry::new(),
            sizing: Sizing::Bytes(64 << 20),
            lane_width: 32,
            alloc_retries: 5,
            workers: thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            seed: 1,
            on_oom: OnOom::Error,
        }
    }

    /// Registers a concrete type with the given per-object field sizes in
    /// bytes. Returns the type id used in handles and all later calls.
    pub fn register_type(&mut self, name: &str, field_sizes: &[usize]) -> Result<u8, ConfigError> {
        self.registry.add(name, None, field_sizes, false)
    }

    /// Registers an abstract base type: it contributes its fields to
    /// subtypes and can be the target of a do-all pass, but cannot be
    /// instantiated and does not constrain block capacities.
    pub fn register_base(&mut self, name: &str, field_sizes: &[usize]) -> Result<u8, ConfigError> {
        self.registry.add(name, None, field_sizes, true)
    }

    /// Registers a concrete subtype. Its fields are the parent's fields
    /// followed by `own_field_sizes`; field indices of the parent carry over.
    pub fn register_subtype(
        &mut self,
        name: &str,
        parent: u8,
        own_field_sizes: &[usize],
    ) -> Result<u8, ConfigError> {
        self.registry.add(name, Some(parent), own_field_sizes, false)
    }

    /// Total arena budget in bytes; the block count is whatever fits.
    /// Default 64 MiB.
    pub fn heap_bytes(&mut self, bytes: usize) -> &mut Self {
        self.sizing = Sizing::Bytes(bytes);
        self
    }

    /// Exact number of blocks, overriding [`heap_bytes`](Self::heap_bytes).
    pub fn heap_blocks(&mut self, blocks: usize) -> &mut Self {
        self.sizing = Sizing::Blocks(blocks);
        self
    }

    /// Width of a worker lane group in do-all passes (1..=64, default 32).
    /// Slots of a block are distributed over one lane group, so the width
    /// also sets the batch size of bulk creation.
    pub fn lane_width(&mut self, width: u32) -> &mut Self {
        assert!((1..=64).contains(&width), "lane width must be 1..=64");
        self.lane_width = width;
        self
    }

    /// Fast-path attempts to find an active block before falling back to
    /// claiming a fresh one (default 5). Higher values pack objects more
    /// densely under contention; lower values allocate faster.
    pub fn alloc_retries(&mut self, retries: u32) -> &mut Self {
        assert!(retries >= 1, "at least one fast-path attempt is required");
        self.alloc_retries = retries;
        self
    }

    /// Worker threads used by do-all passes and bulk creation (default: the
    /// machine's available parallelism). `1` runs every pass inline on the
    /// calling thread, deterministically.
    pub fn worker_threads(&mut self, workers: usize) -> &mut Self {
        assert!(workers >= 1);
        self.workers = workers;
        self
    }

    /// Base seed for search rotation in parallel passes.
    pub fn rng_seed(&mut self, seed: u64) -> &mut Self {
        self.seed = seed;
        self
    }

    /// Out-of-memory policy (default [`OnOom::Error`]).
    pub fn on_oom(&mut self, policy: OnOom) -> &mut Self {
        self.on_oom = policy;
        self
    }

    /// Validates the configuration, computes block layouts, and allocates
    /// the arena.
    pub fn build(mut self) -> Result<SoaHeap, ConfigError> {
        self.registry.seal()?;
        let data_bytes = self.registry.data_bytes();
        let block_bytes = HEADER_BYTES + data_bytes.div_ceil(64) * 64;
        let num_blocks = match self.sizing {
            Sizing::Blocks(n) => n,
            Sizing::Bytes(b) => b / block_bytes,
        };
        if num_blocks == 0 {
            let heap_bytes = match self.sizing {
                Sizing::Bytes(b) => b,
                Sizing::Blocks(_) => 0,
            };
            return Err(ConfigError::HeapTooSmall {
                heap_bytes,
                block_bytes,
            });
        }
        let arena = Arena::new(num_blocks, data_bytes);
        // Free blocks keep a fully-set allocation bitmap (the "invalidated"
        // state), so a racy reservation against a block that was reclaimed
        // can only fail, never hand out a slot.
        for b in 0..num_blocks {
            arena.alloc_bitmap(b).store(u64::MAX, SeqCst);
        }
        let num_types = self.registry.num_types();
        let per_type = |_| HierarchicalBitmap::new(num_blocks, BitmapInit::AllClear);
        Ok(SoaHeap {
            free: HierarchicalBitmap::new(num_blocks, BitmapInit::AllSet),
            allocated: (0..num_types).map(per_type).collect(),
            active: (0..num_types).map(per_type).collect(),
            arena,
            registry: self.registry,
            lane_width: self.lane_width,
            alloc_retries: self.alloc_retries,
            workers: self.workers,
            base_seed: self.seed,
            on_oom: self.on_oom,
            counters: Counters::default(),
        })
    }
}

#[derive(Default)]
struct Counters {
    allocations: AtomicU64,
    deallocations: AtomicU64,
    block_initializations: AtomicU64,
    type_rollbacks: AtomicU64,
    reserve_retries: AtomicU64,
}

/// Snapshot of the heap's monotonic event counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeapCounters {
    /// Successful object allocations.
    pub allocations: u64,
    /// Object deallocations requested by the application.
    pub deallocations: u64,
    /// Slow-path block claims (a fresh block initialized for a type).
    pub block_initializations: u64,
    /// Slots that were reserved in a block whose type had changed underneath
    /// the allocator and had to be given back.
    pub type_rollbacks: u64,
    /// Reservation attempts that found the chosen block full or reclaimed.
    pub reserve_retries: u64,
}

/// The lock-free dynamic SOA object heap. All methods take `&self`; the heap
/// is meant to be shared across threads (e.g. in an `Arc` or a scope).
pub struct SoaHeap {
    arena: Arena,
    registry: TypeRegistry,
    free: HierarchicalBitmap,
    /// Indexed by `type_id - 1`.
    allocated: Vec<HierarchicalBitmap>,
    active: Vec<HierarchicalBitmap>,
    lane_width: u32,
    alloc_retries: u32,
    workers: usize,
    base_seed: u64,
    on_oom: OnOom,
    counters: Counters,
}

impl SoaHeap {
    pub fn builder() -> SoaHeapBuilder {
        SoaHeapBuilder::new()
    }

    /// Number of blocks in the arena.
    pub fn num_blocks(&self) -> usize {
        self.arena.num_blocks()
    }

    /// Byte size of one block including its header.
    pub fn block_bytes(&self) -> usize {
        self.arena.block_stride()
    }

    /// Objects of `type_id` that fit in one block.
    pub fn capacity(&self, type_id: u8) -> u32 {
        self.registry.descriptor(type_id).capacity_or_zero()
    }

    /// Worker threads used by parallel passes.
    pub fn worker_threads(&self) -> usize {
        self.workers
    }

    /// Configured lane-group width.
    pub fn lane_width(&self) -> u32 {
        self.lane_width
    }

    pub(crate) fn registry(&self) -> &TypeRegistry {
        &self.registry
    }

    pub(crate) fn arena(&self) -> &Arena {
        &self.arena
    }

    pub(crate) fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub(crate) fn allocated_of(&self, type_id: u8) -> &HierarchicalBitmap {
        &self.allocated[type_id as usize - 1]
    }

    pub(crate) fn active_of(&self, type_id: u8) -> &HierarchicalBitmap {
        &self.active[type_id as usize - 1]
    }

    fn descriptor_checked(&self, type_id: u8, op: &str) -> &TypeDescriptor {
        let desc = self.registry.descriptor(type_id);
        assert!(
            !desc.is_abstract(),
            "cannot {op} abstract type {:?}",
            desc.name()
        );
        desc
    }

    // ------------------------------------------------------------------
    // Allocation
    // ------------------------------------------------------------------

    /// Allocates one object of `type_id`. Field data is uninitialized (it
    /// holds whatever the slot's previous occupant left); see
    /// [`allocate_with`](Self::allocate_with).
    pub fn allocate(&self, type_id: u8) -> Result<ObjectHandle, AllocError> {
        self.allocate_seeded(type_id, thread_seed())
    }

    /// Allocates one object and runs `init` on it before returning it.
    pub fn allocate_with(
        &self,
        type_id: u8,
        init: impl FnOnce(&SoaHeap, ObjectHandle),
    ) -> Result<ObjectHandle, AllocError> {
        let h = self.allocate(type_id)?;
        init(self, h);
        Ok(h)
    }

    pub(crate) fn allocate_seeded(
        &self,
        type_id: u8,
        mut seed: u64,
    ) -> Result<ObjectHandle, AllocError> {
        let capacity = self.descriptor_checked(type_id, "allocate").capacity_or_zero();
        let mut oom_rounds = 0;
        loop {
            let bid = match self.find_or_claim_block(type_id, capacity, &mut seed, &mut oom_rounds)?
            {
                Some(b) => b,
                None => continue, // transient exhaustion; retry the round
            };
            match self.arena.reserve(bid, 1, seed) {
                None => {
                    // Block filled up or was reclaimed between lookup and
                    // reservation; go around again.
                    self.counters.reserve_retries.fetch_add(1, Relaxed);
                    seed = seed.wrapping_add(1);
                }
                Some((mask, fill)) => {
                    let slot = mask.trailing_zeros();
                    if let Some(h) = self.finish_reservation(type_id, capacity, bid, slot, fill) {
                        self.counters.allocations.fetch_add(1, Relaxed);
                        return Ok(h);
                    }
                    seed = seed.wrapping_add(1);
                }
            }
        }
    }

    /// Fast path: look for an active block of `type_id`. Slow path: claim a
    /// free block and publish it. `Ok(None)` means "nothing found this round,
    /// retry"; `Err` is a genuine out-of-memory report.
    fn find_or_claim_block(
        &self,
        type_id: u8,
        capacity: u32,
        seed: &mut u64,
        oom_rounds: &mut u32,
    ) -> Result<Option<usize>, AllocError> {
        for _ in 0..self.alloc_retries {
            if let Some(b) = self.active_of(type_id).try_find_set(*seed) {
                return Ok(Some(b));
            }
            *seed = seed.wrapping_add(1);
        }
        if let Some(b) = self.free.clear_any(*seed) {
            self.arena.initialize(b, type_id, capacity);
            self.counters.block_initializations.fetch_add(1, Relaxed);
            self.allocated_of(type_id).set(b);
            self.active_of(type_id).set(b);
            return Ok(Some(b));
        }
        // Neither an active nor a free block was visible. This can be
        // transient (other threads hold blocks mid-initialization or
        // mid-reclamation), so spin a little before declaring failure.
        match self.on_oom {
            OnOom::Spin => {
                std::hint::spin_loop();
                *seed = seed.wrapping_add(1);
                Ok(None)
            }
            OnOom::Error => {
                *oom_rounds += 1;
                if *oom_rounds >= OOM_RETRY_ROUNDS {
                    Err(AllocError::OutOfMemory)
                } else {
                    *seed = seed.wrapping_add(1);
                    Ok(None)
                }
            }
        }
    }

    /// After slots were reserved in `bid`: handle the full transition, check
    /// the block still holds `type_id`, and either return the handle or roll
    /// the slot back. `None` means the caller must retry.
    fn finish_reservation(
        &self,
        type_id: u8,
        capacity: u32,
        bid: usize,
        slot: u32,
        fill: FillState,
    ) -> Option<ObjectHandle> {
        // Once this thread holds a reserved slot the block cannot be
        // invalidated (the reservation bit makes every invalidation attempt
        // roll back), so the type read below is stable until we release it.
        let actual = self.arena.type_id(bid).load(SeqCst);
        if fill == FillState::Full {
            // This thread set the last free bit, so it owns the block's
            // active -> inactive transition — under the block's *actual*
            // type, which is the bitmap all other threads will search.
            self.active_of(actual).clear(bid);
        }
        if actual == type_id {
            return Some(ObjectHandle::encode(type_id, capacity, bid, slot));
        }
        // The block was reclaimed and reinitialized for another type between
        // our bitmap lookup and the reservation. The slot we hold is a valid
        // slot of that other type; give it back through the regular
        // deallocation path and retry.
        self.counters.type_rollbacks.fetch_add(1, Relaxed);
        self.release_slot(actual, bid, slot);
        None
    }

    /// Allocates `count` objects, batching reservations so neighbors land in
    /// the same block where possible. On exhaustion the objects created so
    /// far are kept and reported in the error.
    pub fn allocate_batch(
        &self,
        type_id: u8,
        count: usize,
    ) -> Result<Vec<ObjectHandle>, BulkNewError> {
        let mut out = Vec::with_capacity(count);
        match self.allocate_batch_seeded(type_id, count, thread_seed(), &mut out) {
            Ok(()) => Ok(out),
            Err(AllocError::OutOfMemory) => Err(BulkNewError {
                created: out,
                requested: count,
            }),
        }
    }

    /// Batch allocation core: pushes exactly `count` handles into `out`
    /// unless the heap is exhausted (handles pushed so far stay valid).
    pub(crate) fn allocate_batch_seeded(
        &self,
        type_id: u8,
        count: usize,
        mut seed: u64,
        out: &mut Vec<ObjectHandle>,
    ) -> Result<(), AllocError> {
        let capacity = self.descriptor_checked(type_id, "allocate").capacity_or_zero();
        let mut remaining = count;
        let mut oom_rounds = 0;
        while remaining > 0 {
            let bid = match self.find_or_claim_block(type_id, capacity, &mut seed, &mut oom_rounds)?
            {
                Some(b) => b,
                None => continue,
            };
            let want = remaining.min(64) as u32;
            match self.arena.reserve(bid, want, seed) {
                None => {
                    self.counters.reserve_retries.fetch_add(1, Relaxed);
                    seed = seed.wrapping_add(1);
                }
                Some((mask, fill)) => {
                    let got = self.finish_batch_reservation(type_id, capacity, bid, mask, fill, out);
                    remaining -= got;
                    seed = seed.wrapping_add(1);
                }
            }
        }
        Ok(())
    }

    /// Batch variant of [`finish_reservation`](Self::finish_reservation):
    /// returns how many handles were actually produced (0 on a type
    /// rollback).
    fn finish_batch_reservation(
        &self,
        type_id: u8,
        capacity: u32,
        bid: usize,
        mask: u64,
        fill: FillState,
        out: &mut Vec<ObjectHandle>,
    ) -> usize {
        let actual = self.arena.type_id(bid).load(SeqCst);
        if fill == FillState::Full {
            self.active_of(actual).clear(bid);
        }
        let mut produced = 0;
        let mut m = mask;
        while m != 0 {
            let slot = m.trailing_zeros();
            m &= m - 1;
            if actual == type_id {
                out.push(ObjectHandle::encode(type_id, capacity, bid, slot));
                self.counters.allocations.fetch_add(1, Relaxed);
                produced += 1;
            } else {
                self.counters.type_rollbacks.fetch_add(1, Relaxed);
                self.release_slot(actual, bid, slot);
            }
        }
        produced
    }

    // ------------------------------------------------------------------
    // Deallocation and reclamation
    // ------------------------------------------------------------------

    /// Frees the object behind `handle`. Freeing a handle twice, or a handle
    /// whose object was already freed elsewhere, is a logic error (caught by
    /// a debug assertion).
    pub fn deallocate(&self, handle: ObjectHandle) {
        assert!(!handle.is_null(), "cannot deallocate the null handle");
        self.counters.deallocations.fetch_add(1, Relaxed);
        self.release_slot(handle.type_id(), handle.block(), handle.slot());
    }

    /// Runs `finalize` on the object, then frees it.
    pub fn deallocate_with(
        &self,
        handle: ObjectHandle,
        finalize: impl FnOnce(&SoaHeap, ObjectHandle),
    ) {
        finalize(self, handle);
        self.deallocate(handle);
    }

    /// Clears one slot bit and performs whatever block transition that
    /// implies. Shared by user deallocation and allocator rollback.
    fn release_slot(&self, type_id: u8, bid: usize, slot: u32) {
        let capacity = self.registry.descriptor(type_id).capacity_or_zero();
        match self.arena.deallocate_slot(bid, slot, capacity) {
            DeallocState::Regular => {}
            DeallocState::First => {
                // The block was full (or invalidation-locked) and now has a
                // free slot: re-activate it. The matching deactivation — by
                // the allocator that filled the block, or by an invalidator
                // that caught this free in its window — may still be in
                // flight, which is why this is a waiting set.
                self.active_of(type_id).set(bid);
            }
            DeallocState::Empty => {
                if self.try_invalidate(bid) {
                    // The block is locked down; retire it. The type is
                    // re-read because an earlier incarnation of this handle's
                    // block may have been reclaimed for another type already
                    // (the handle's own type is stale in that case, but the
                    // bitmap transitions above were still valid).
                    let t = self.arena.type_id(bid).load(SeqCst);
                    if self.registry.descriptor(t).capacity_or_zero() > 1 {
                        // Deactivate. Capacity-1 blocks are special: they
                        // jump straight between empty and full, the
                        // was-full transition classifies as Empty (it wins
                        // over First), and so their active bit is never set
                        // in the first place.
                        self.active_of(t).clear(bid);
                    }
                    self.allocated_of(t).clear(bid);
                    self.free.set(bid);
                }
            }
        }
    }

    /// Tries to take block `bid` out of circulation by setting all 64
    /// allocation bits. Returns true iff the block was caught empty and is
    /// now permanently unreservable — the caller then owns its retirement.
    fn try_invalidate(&self, bid: usize) -> bool {
        loop {
            let before = self.arena.invalidate_all(bid);
            if before == u64::MAX {
                // Already unreservable: full again, or someone else's
                // invalidation. Either way this thread has nothing to claim.
                return false;
            }
            let t = self.arena.type_id(bid).load(SeqCst);
            let pad = padding_mask(self.registry.descriptor(t).capacity_or_zero());
            if before == pad {
                // Caught it empty: the all-set state sticks and no
                // reservation can succeed anymore.
                return true;
            }
            // Live slots were caught; undo.
            let before_rollback = self.arena.rollback_invalidation(bid, before);
            if before_rollback == u64::MAX {
                // Nothing changed during the window; the block simply stays
                // live.
                return false;
            }
            // A deallocation hit the window while every bit was set, so it
            // classified itself as the was-full transition and is now
            // waiting to set the active bit. Perform the matching clear on
            // its behalf (the block never really was full), keeping the
            // set/clear pairing strictly alternating.
            self.active_of(t).clear(bid);
            if before_rollback & before != pad {
                // Other objects are still live; the block goes on.
                return false;
            }
            // That deallocation freed the last object but saw a fully-set
            // bitmap, so it could not classify the block as empty — the
            // retirement duty falls back to this thread. Try again.
        }
    }

    // ------------------------------------------------------------------
    // Field access
    // ------------------------------------------------------------------

    /// Bounds- and layout-checked pointer to `field` of the object behind
    /// `handle`.
    fn field_ptr(&self, handle: ObjectHandle, field: usize, expect_size: usize) -> *mut u8 {
        assert!(!handle.is_null(), "null handle dereference");
        let desc = self.registry.descriptor(handle.type_id());
        let sizes = desc.field_sizes();
        assert!(
            field < sizes.len(),
            "type {:?} has {} fields, field {field} requested",
            desc.name(),
            sizes.len()
        );
        assert_eq!(
            sizes[field],
            expect_size,
            "field {field} of {:?} is {} bytes, accessed as {expect_size}",
            desc.name(),
            sizes[field]
        );
        let bid = handle.block();
        assert!(bid < self.arena.num_blocks(), "handle from another heap");
        let slot = handle.slot() as usize;
        debug_assert!(slot < desc.capacity_or_zero() as usize);
        let offset = desc.field_offset(field) + slot * expect_size;
        // SAFETY: offset < the type's data segment size <= the block's data
        // segment size, so the pointer stays inside block `bid`'s data.
        unsafe { self.arena.data_ptr(bid).add(offset) }
    }

    /// Reads one field of an object. `T` must match the field's registered
    /// size exactly. The access is a relaxed atomic load of the field's
    /// width, so races with concurrent writers are benign (they yield one of
    /// the written values, never tearing or undefined behavior).
    pub fn read_field<T: FieldValue>(&self, handle: ObjectHandle, field: usize) -> T {
        let ptr = self.field_ptr(handle, field, T::SIZE);
        // SAFETY: in-bounds (field_ptr) and aligned — every field array is
        // aligned to its element size (power-of-two sizes up to 8).
        unsafe { T::load_relaxed(ptr) }
    }

    /// Writes one field of an object; the counterpart of
    /// [`read_field`](Self::read_field).
    pub fn write_field<T: FieldValue>(&self, handle: ObjectHandle, field: usize, value: T) {
        let ptr = self.field_ptr(handle, field, T::SIZE);
        // SAFETY: as in read_field.
        unsafe { T::store_relaxed(ptr, value) }
    }

    /// Direct atomic view of an 8-byte field, for compare-and-swap claims
    /// (e.g. electing a unique winner among concurrent visitors).
    pub fn atomic_u64_field(&self, handle: ObjectHandle, field: usize) -> &AtomicU64 {
        let ptr = self.field_ptr(handle, field, 8);
        // SAFETY: 8-byte fields are 8-aligned by layout; the arena outlives
        // &self.
        unsafe { &*(ptr as *const AtomicU64) }
    }

    // ------------------------------------------------------------------
    // Introspection (quiescent-state accounting)
    // ------------------------------------------------------------------

    /// Live objects of exactly `type_id` (no subtype aggregation). Only
    /// meaningful while no allocations or frees are in flight.
    pub fn live_count(&self, type_id: u8) -> u64 {
        let capacity = self.registry.descriptor(type_id).capacity_or_zero() as u64;
        if capacity == 0 {
            return 0; // abstract type: no blocks of its own
        }
        self.allocated_of(type_id)
            .indices()
            .iter()
            .map(|&b| {
                let bits = self.arena.alloc_bitmap(b).load(SeqCst);
                u64::from(bits.count_ones()) - (64 - capacity)
            })
            .sum()
    }

    /// Blocks currently assigned to any type.
    pub fn allocated_block_count(&self) -> usize {
        self.allocated.iter().map(|bm| bm.count_set()).sum()
    }

    /// Internal fragmentation: the fraction of slots in allocated blocks
    /// that are unused. 0.0 when no blocks are allocated. Quiescent-state
    /// only.
    pub fn fragmentation(&self) -> f64 {
        let mut total_slots = 0u64;
        let mut free_slots = 0u64;
        for desc in self.registry.descriptors() {
            let Some(capacity) = desc.capacity() else {
                continue;
            };
            for b in self.allocated_of(desc.type_id()).indices() {
                let bits = self.arena.alloc_bitmap(b).load(SeqCst);
                total_slots += u64::from(capacity);
                free_slots += u64::from(bits.count_zeros());
            }
        }
        if total_slots == 0 {
            0.0
        } else {
            free_slots as f64 / total_slots as f64
        }
    }

    /// Snapshot of the event counters.
    pub fn counters(&self) -> HeapCounters {
        HeapCounters {
            allocations: self.counters.allocations.load(Relaxed),
            deallocations: self.counters.deallocations.load(Relaxed),
            block_initializations: self.counters.block_initializations.load(Relaxed),
            type_rollbacks: self.counters.type_rollbacks.load(Relaxed),
            reserve_retries: self.counters.reserve_retries.load(Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.allocations.store(0, Relaxed);
        self.counters.deallocations.store(0, Relaxed);
        self.counters.block_initializations.store(0, Relaxed);
        self.counters.type_rollbacks.store(0, Relaxed);
        self.counters.reserve_retries.store(0, Relaxed);
    }

    /// Exhaustively checks every cross-structure invariant. Quiescent-state
    /// only. Panics with a description on the first violation; used by tests
    /// and available to applications as a debugging aid.
    pub fn check_consistency(&self) {
        self.free.verify_consistency().expect("free bitmap");
        for desc in self.registry.descriptors() {
            let t = desc.type_id();
            self.allocated_of(t)
                .verify_consistency()
                .unwrap_or_else(|e| panic!("allocated[{t}] bitmap: {e}"));
            self.active_of(t)
                .verify_consistency()
                .unwrap_or_else(|e| panic!("active[{t}] bitmap: {e}"));
            if desc.is_abstract() {
                assert_eq!(
                    self.allocated_of(t).count_set(),
                    0,
                    "abstract type {t} owns blocks"
                );
            }
        }
        for b in 0..self.arena.num_blocks() {
            let owners: Vec<u8> = self
                .registry
                .descriptors()
                .filter(|d| self.allocated_of(d.type_id()).get(b))
                .map(|d| d.type_id())
                .collect();
            let is_free = self.free.get(b);
            assert!(
                usize::from(is_free) + owners.len() == 1,
                "block {b}: free={is_free}, owners={owners:?} — not a partition"
            );
            let bits = self.arena.alloc_bitmap(b).load(SeqCst);
            if is_free {
                assert_eq!(bits, u64::MAX, "free block {b} is reservable");
                continue;
            }
            let t = owners[0];
            let header_t = self.arena.type_id(b).load(SeqCst);
            assert_eq!(header_t, t, "block {b}: header type {header_t}, bitmap owner {t}");
            let capacity = self.registry.descriptor(t).capacity_or_zero();
            let pad = padding_mask(capacity);
            assert_eq!(bits & pad, pad, "block {b}: padding bits clear");
            let has_free_slot = bits != u64::MAX;
            if capacity > 1 {
                assert_eq!(
                    self.active_of(t).get(b),
                    has_free_slot,
                    "block {b}: active bit vs fill level"
                );
            } else {
                assert!(!self.active_of(t).get(b), "capacity-1 block {b} active");
            }
        }
    }
}

// ----------------------------------------------------------------------
// Field value types
// ----------------------------------------------------------------------

mod sealed {
    pub trait Sealed {}
}

/// Types that can be read from / written to object fields. Implemented for
/// the fixed-width primitives (1, 2, 4, and 8 bytes) and [`ObjectHandle`];
/// the type's size must equal the registered size of the field it accesses.
pub trait FieldValue: Copy + sealed::Sealed {
    #[doc(hidden)]
    const SIZE: usize;
    /// # Safety
    /// `ptr` must be valid for `SIZE` bytes and aligned to `SIZE`.
    #[doc(hidden)]
    unsafe fn load_relaxed(ptr: *mut u8) -> Self;
    /// # Safety
    /// As in [`load_relaxed`](Self::load_relaxed).
    #[doc(hidden)]
    unsafe fn store_relaxed(ptr: *mut u8, value: Self);
}

macro_rules! impl_field_value {
    ($ty:ty, $atomic:ty, $raw:ty, $from_raw:expr, $to_raw:expr) => {
        impl sealed::Sealed for $ty {}
        impl FieldValue for $ty {
            const SIZE: usize = std::mem::size_of::<$ty>();
            unsafe fn load_relaxed(ptr: *mut u8) -> Self {
                let raw = (*(ptr as *const $atomic)).load(Relaxed);
                ($from_raw)(raw)
            }
            unsafe fn store_relaxed(ptr: *mut u8, value: Self) {
                (*(ptr as *const $atomic)).store(($to_raw)(value), Relaxed);
            }
        }
    };
}

impl_field_value!(u8, AtomicU8, u8, |r| r, |v| v);
impl_field_value!(u16, AtomicU16, u16, |r| r, |v| v);
impl_field_value!(u32, AtomicU32, u32, |r| r, |v| v);
impl_field_value!(u64, AtomicU64, u64, |r| r, |v| v);
impl_field_value!(i8, AtomicU8, u8, |r| r as i8, |v: i8| v as u8);
impl_field_value!(i16, AtomicU16, u16, |r| r as i16, |v: i16| v as u16);
impl_field_value!(i32, AtomicU32, u32, |r| r as i32, |v: i32| v as u32);
impl_field_value!(i64, AtomicU64, u64, |r| r as i64, |v: i64| v as u64);
impl_field_value!(f32, AtomicU32, u32, f32::from_bits, f32::to_bits);
impl_field_value!(f64, AtomicU64, u64, f64::from_bits, f64::to_bits);
impl_field_value!(
    ObjectHandle,
    AtomicU64,
    u64,
    ObjectHandle::from_raw,
    ObjectHandle::raw
);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::Barrier;

    fn two_type_heap(blocks: usize) -> (SoaHeap, u8, u8) {
        let mut b = SoaHeap::builder();
        let small = b.register_type("small", &[4, 1]).unwrap(); // 5 bytes
        let big = b.register_type("big", &[8]).unwrap(); // 8 bytes
        b.heap_blocks(blocks);
        (b.build().unwrap(), small, big)
    }

    #[test]
    fn builder_computes_block_layout() {
        let (heap, small, big) = two_type_heap(16);
        // Smallest object 5B -> capacity 64 for it, 40 for the 8B type.
        assert_eq!(heap.capacity(small), 64);
        assert_eq!(heap.capacity(big), 40);
        // Data segment: max over types. small: 4*64 + 1*64 = 320;
        // big: 8*40 = 320. Block = 64 header + 320 data.
        assert_eq!(heap.block_bytes(), 384);
        assert_eq!(heap.num_blocks(), 16);
    }

    #[test]
    fn builder_sizes_by_bytes() {
        let mut b = SoaHeap::builder();
        b.register_type("t", &[8]).unwrap();
        b.heap_bytes(10_000);
        let heap = b.build().unwrap();
        // 8B objects, smallest 8B -> capacity 64, data 512, block 576.
        assert_eq!(heap.block_bytes(), 576);
        assert_eq!(heap.num_blocks(), 10_000 / 576);
    }

    #[test]
    fn builder_rejects_too_small_heap() {
        let mut b = SoaHeap::builder();
        b.register_type("t", &[8]).unwrap();
        b.heap_bytes(100);
        match b.build() {
            Err(ConfigError::HeapTooSmall {
                heap_bytes: 100,
                block_bytes: 576,
            }) => {}
            Err(other) => panic!("unexpected error: {other:?}"),
            Ok(_) => panic!("a 100-byte heap cannot hold a 576-byte block"),
        }
    }

    #[test]
    fn fresh_heap_is_all_free_and_consistent() {
        let (heap, small, big) = two_type_heap(8);
        assert_eq!(heap.allocated_block_count(), 0);
        assert_eq!(heap.live_count(small), 0);
        assert_eq!(heap.live_count(big), 0);
        assert_eq!(heap.fragmentation(), 0.0);
        heap.check_consistency();
    }

    #[test]
    fn allocate_deallocate_round_trip() {
        let (heap, small, _) = two_type_heap(8);
        let h = heap.allocate(small).unwrap();
        assert_eq!(h.type_id(), small);
        assert_eq!(h.capacity(), 64);
        assert!(h.slot() < 64);
        assert!(h.block() < 8);
        assert_eq!(heap.live_count(small), 1);
        assert_eq!(heap.allocated_block_count(), 1);
        heap.check_consistency();

        heap.deallocate(h);
        assert_eq!(heap.live_count(small), 0);
        assert_eq!(heap.allocated_block_count(), 0, "empty block reclaimed");
        heap.check_consistency();

        let c = heap.counters();
        assert_eq!(c.allocations, 1);
        assert_eq!(c.deallocations, 1);
        assert_eq!(c.block_initializations, 1);
    }

    #[test]
    fn sequential_allocations_pack_into_one_block() {
        let (heap, small, _) = two_type_heap(8);
        let handles: Vec<_> = (0..64).map(|_| heap.allocate(small).unwrap()).collect();
        let first_block = handles[0].block();
        assert!(
            handles.iter().all(|h| h.block() == first_block),
            "single thread fills one block before opening another"
        );
        let slots: HashSet<u32> = handles.iter().map(|h| h.slot()).collect();
        assert_eq!(slots.len(), 64, "all 64 slots, each once");
        assert_eq!(heap.allocated_block_count(), 1);

        // Block 1 is now full; the 65th allocation opens a second block.
        let extra = heap.allocate(small).unwrap();
        assert_ne!(extra.block(), first_block);
        assert_eq!(heap.allocated_block_count(), 2);
        heap.check_consistency();
    }

    #[test]
    fn field_round_trip_all_widths() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("mixed", &[1, 2, 4, 8, 4, 8]).unwrap();
        b.heap_blocks(4);
        let heap = b.build().unwrap();
        let h = heap.allocate(t).unwrap();

        heap.write_field::<u8>(h, 0, 0xAB);
        heap.write_field::<u16>(h, 1, 0xCDEF);
        heap.write_field::<u32>(h, 2, 0xDEAD_BEEF);
        heap.write_field::<u64>(h, 3, 0x0123_4567_89AB_CDEF);
        heap.write_field::<f32>(h, 4, -3.75);
        heap.write_field::<f64>(h, 5, 2.5e300);

        assert_eq!(heap.read_field::<u8>(h, 0), 0xAB);
        assert_eq!(heap.read_field::<u16>(h, 1), 0xCDEF);
        assert_eq!(heap.read_field::<u32>(h, 2), 0xDEAD_BEEF);
        assert_eq!(heap.read_field::<u64>(h, 3), 0x0123_4567_89AB_CDEF);
        assert_eq!(heap.read_field::<f32>(h, 4), -3.75);
        assert_eq!(heap.read_field::<f64>(h, 5), 2.5e300);

        // Signed and handle-valued accessors share the raw representation.
        heap.write_field::<i32>(h, 2, -7);
        assert_eq!(heap.read_field::<i32>(h, 2), -7);
        let other = heap.allocate(t).unwrap();
        heap.write_field::<ObjectHandle>(h, 3, other);
        assert_eq!(heap.read_field::<ObjectHandle>(h, 3), other);
    }

    #[test]
    fn fields_of_neighboring_slots_do_not_overlap() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("pair", &[4, 4]).unwrap();
        b.heap_blocks(2);
        let heap = b.build().unwrap();
        let hs: Vec<_> = (0..64).map(|_| heap.allocate(t).unwrap()).collect();
        for (i, &h) in hs.iter().enumerate() {
            heap.write_field::<u32>(h, 0, i as u32);
            heap.write_field::<u32>(h, 1, 1000 + i as u32);
        }
        for (i, &h) in hs.iter().enumerate() {
            assert_eq!(heap.read_field::<u32>(h, 0), i as u32);
            assert_eq!(heap.read_field::<u32>(h, 1), 1000 + i as u32);
        }
    }

    #[test]
    #[should_panic(expected = "is 4 bytes, accessed as 8")]
    fn field_size_mismatch_panics() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("t", &[4]).unwrap();
        b.heap_blocks(2);
        let heap = b.build().unwrap();
        let h = heap.allocate(t).unwrap();
        let _ = heap.read_field::<u64>(h, 0);
    }

    #[test]
    #[should_panic(expected = "has 1 fields, field 3 requested")]
    fn field_index_out_of_range_panics() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("t", &[4]).unwrap();
        b.heap_blocks(2);
        let heap = b.build().unwrap();
        let h = heap.allocate(t).unwrap();
        let _ = heap.read_field::<u32>(h, 3);
    }

    #[test]
    fn atomic_field_compare_exchange() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("t", &[8]).unwrap();
        b.heap_blocks(2);
        let heap = b.build().unwrap();
        let h = heap.allocate(t).unwrap();
        heap.write_field::<u64>(h, 0, 0);
        let a = heap.atomic_u64_field(h, 0);
        assert!(a.compare_exchange(0, 42, SeqCst, SeqCst).is_ok());
        assert!(a.compare_exchange(0, 43, SeqCst, SeqCst).is_err());
        assert_eq!(heap.read_field::<u64>(h, 0), 42);
    }

    #[test]
    fn allocate_with_initializes_before_return() {
        let (heap, small, _) = two_type_heap(4);
        let h = heap
            .allocate_with(small, |heap, h| heap.write_field::<u32>(h, 0, 7))
            .unwrap();
        assert_eq!(heap.read_field::<u32>(h, 0), 7);
    }

    #[test]
    fn empty_block_is_recycled_for_another_type() {
        let (heap, small, big) = two_type_heap(1);
        let h = heap.allocate(small).unwrap();
        assert!(
            heap.allocate(big).is_err(),
            "single block heap: second type cannot fit while the first lives"
        );
        heap.deallocate(h);
        let h2 = heap.allocate(big).unwrap();
        assert_eq!(h2.type_id(), big);
        assert_eq!(h2.block(), 0, "same physical block, new type");
        heap.check_consistency();
    }

    #[test]
    fn out_of_memory_reports_error_and_heap_stays_usable() {
        let mut b = SoaHeap::builder();
        let t = b.register_type("t", &[64]).unwrap();
        b.heap_blocks(2);
        let heap = b.build().unwrap();
        assert_eq!(heap.capacity(t), 64); // only type: capacity 64
        let handles: Vec<_> = (0..128).map(|_| heap.allocate(t).unwrap()).collect();
        assert!(matches!(heap.allocate(t), Err(AllocError::OutOfMemory)));
        heap.deallocate(handles[17]);
        let h = heap.allocate(t).expect("slot freed, allocation succeeds again");
        assert_eq!(heap.live_count(t), 128);
        heap.deallocate(h);
        for (i, h) in handles.into_iter().enumerate() {
            if i != 17 {
                heap.deallocate(h);
            }
        }
        assert_eq!(heap.allocated_block_count(), 0);
        heap.check_consistency();
    }

    #[test]
    fn capacity_one_blocks_cycle_cleanly() {
        let mut b = SoaHeap::builder();
        // Field sizes chosen so one object fills a whole block of the
        // smallest type: 8B smallest, 512B object -> capacity 1.
        let tiny = b.register_type("tiny", &[8]).unwrap();
        let huge = b.register_type("huge", &[8, 504]).unwrap();
        b.heap_blocks(3);
        let heap = b.build().unwrap();
        assert_eq!(heap.capacity(huge), 1);
        assert_eq!(heap.capacity(tiny), 64);
        for _ in 0..5 {
            let h = heap.allocate(huge).unwrap();
            heap.write_field::<u64>(h, 0, 9);
            heap.deallocate(h);
        }
        assert_eq!(heap.allocated_block_count(), 0);
        heap.check_consistency();
        // Batch through all three blocks of capacity 1.
        let hs: Vec<_> = (0..3).map(|_| heap.allocate(huge).unwrap()).collect();
        assert!(heap.allocate(huge).is_err());
        hs.into_iter().for_each(|h| heap.deallocate(h));
        heap.check_consistency();
    }

    #[test]
    fn allocate_batch_packs_and_reports_oom() {
        let (heap, small, _) = two_type_heap(2);
        let batch = heap.allocate_batch(small, 100).unwrap();
        assert_eq!(batch.len(), 100);
        let unique: HashSet<u64> = batch.iter().map(|h| h.raw()).collect();
        assert_eq!(unique.len(), 100);
        assert_eq!(heap.allocated_block_count(), 2);
        // 2 blocks * 64 slots = 128 total; 28 remain.
        match heap.allocate_batch(small, 100) {
            Err(BulkNewError { created, requested }) => {
                assert_eq!(requested, 100);
                assert_eq!(created.len(), 28);
                created.into_iter().for_each(|h| heap.deallocate(h));
            }
            Ok(_) => panic!("batch cannot exceed heap capacity"),
        }
        batch.into_iter().for_each(|h| heap.deallocate(h));
        assert_eq!(heap.allocated_block_count(), 0);
        heap.check_consistency();
    }

    #[test]
    fn fragmentation_tracks_partial_blocks() {
        let (heap, small, _) = two_type_heap(8);
        let handles: Vec<_> = (0..64).map(|_| heap.allocate(small).unwrap()).collect();
        assert_eq!(heap.fragmentation(), 0.0, "one full block");
        // Free half of the block: 32 of 64 slots unused.
        for h in &handles[..32] {
            heap.deallocate(*h);
        }
        assert!((heap.fragmentation() - 0.5).abs() < 1e-12);
        for h in &handles[32..] {
            heap.deallocate(*h);
        }
        assert_eq!(heap.fragmentation(), 0.0, "no allocated blocks");
    }

    #[test]
    fn concurrent_churn_then_drain_is_consistent() {
        let (heap, small, big) = two_type_heap(64);
        let threads = 4;
        let ops = 2_000;
        let barrier = Barrier::new(threads);
        thread::scope(|s| {
            for t in 0..threads {
                let heap = &heap;
                let barrier = &barrier;
                s.spawn(move || {
                    let mut rng = 0x243F_6A88_85A3_08D3u64 ^ (t as u64) << 32;
                    let mut mine: Vec<ObjectHandle> = Vec::new();
                    barrier.wait();
                    for _ in 0..ops {
                        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        let ty = if rng & 1 == 0 { small } else { big };
                        if rng & 2 == 0 || mine.is_empty() {
                            if let Ok(h) = heap.allocate(ty) {
                                if ty == small {
                                    heap.write_field::<u32>(h, 0, rng as u32);
                                } else {
                                    heap.write_field::<u64>(h, 0, rng);
                                }
                                mine.push(h);
                            }
                        } else {
                            let idx = (rng >> 8) as usize % mine.len();
                            heap.deallocate(mine.swap_remove(idx));
                        }
                    }
                    for h in mine {
                        heap.deallocate(h);
                    }
                });
            }
        });
        assert_eq!(heap.live_count(small), 0);
        assert_eq!(heap.live_count(big), 0);
        assert_eq!(heap.allocated_block_count(), 0);
        assert_eq!(heap.fragmentation(), 0.0);
        let c = heap.counters();
        assert_eq!(c.allocations, c.deallocations, "full drain");
        heap.check_consistency();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn single_thread_ops_match_model(ops in proptest::collection::vec((any::<bool>(), any::<u8>(), any::<u16>()), 1..400)) {
            let (heap, small, big) = two_type_heap(4);
            let mut live: Vec<ObjectHandle> = Vec::new();
            let mut next_tag: u32 = 1;
            let mut tags: std::collections::HashMap<u64, u32> = std::collections::HashMap::new();
            for (is_alloc, ty_pick, pick) in ops {
                if is_alloc || live.is_empty() {
                    let ty = if ty_pick & 1 == 0 { small } else { big };
                    if let Ok(h) = heap.allocate(ty) {
                        if ty == small {
                            heap.write_field::<u32>(h, 0, next_tag);
                        } else {
                            heap.write_field::<u64>(h, 0, u64::from(next_tag));
                        }
                        live.push(h);
                        tags.insert(h.raw(), next_tag);
                        next_tag += 1;
                    }
                } else {
                    let idx = pick as usize % live.len();
                    let h = live.swap_remove(idx);
                    tags.remove(&h.raw());
                    heap.deallocate(h);
                }
                // No two live handles alias.
                let raws: HashSet<u64> = live.iter().map(|h| h.raw()).collect();
                prop_assert_eq!(raws.len(), live.len());
            }
            // Tags written at allocation are still intact: slots were never
            // handed out twice.
            for h in &live {
                let got = if h.type_id() == small {
                    u64::from(heap.read_field::<u32>(*h, 0))
                } else {
                    heap.read_field::<u64>(*h, 0)
                };
                prop_assert_eq!(got, u64::from(tags[&h.raw()]));
            }
            prop_assert_eq!(heap.live_count(small) + heap.live_count(big), live.len() as u64);
            for h in live { heap.deallocate(h); }
            heap.check_consistency();
        }
    }
}
