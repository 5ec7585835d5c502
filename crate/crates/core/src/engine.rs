//! Parallel do-all execution: apply one function to every object of a type
//! (and its subtypes) using all worker threads.
//!
//! # Work assignment
//!
//! A pass over a type enumerates objects through a fixed arithmetic scheme
//! rather than a shared work queue. Given the snapshot `R` of allocated
//! blocks (length `r`), the block capacity `n_t`, and a chosen number of
//! logical lanes `n`, lane `tid` processes
//!
//! * slot `tid % n_t` — the *same* slot position in every block it touches,
//! * of blocks `R[(tid + k*n) / n_t]` for `k = 0, 1, ...` while
//!   `tid + k*n < r*n_t`.
//!
//! Consecutive lanes therefore process consecutive slots of the same block,
//! which is what makes SOA field access stream through memory. The scheme
//! covers every (block, slot) pair exactly once if and only if `n` is a
//! multiple of `n_t` or at least `r * n_t`; [`EnumerationPlan`] captures the
//! arithmetic and [`choose_lane_count`] only ever picks a valid `n`.
//!
//! Lanes are grouped `lane_width` at a time; group `g` runs on worker
//! `g % workers`. With one worker everything runs inline on the calling
//! thread in a deterministic order.
//!
//! # Snapshot semantics
//!
//! Right before its sub-pass, each concrete type's allocation bitmaps are
//! copied into the per-block iteration bitmaps. A visit happens only where
//! the iteration bit is set and the block still holds the sub-pass type, so:
//!
//! * objects created during the pass (any type) are not visited in the
//!   sub-pass that is already running — same-type creations wait for the
//!   next pass; creations of a subtype whose sub-pass has not started yet
//!   are picked up by that later sub-pass;
//! * a visitor may deallocate **its own** object freely. Deallocating other
//!   objects of the same pass from inside a visitor is not allowed (a
//!   reclaimed-and-reused block would otherwise still receive visits; with
//!   self-deletion only, a block can empty out only after all of its
//!   snapshot visits have run).
//!
//! The pass always drains: if a visitor fails or panics, the remaining
//! objects are still visited, then the first failure is reported (first
//! panic wins over first error).

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::atomic::Ordering::SeqCst;
use std::sync::Mutex;
use std::thread;

use crate::error::{AllocError, BulkNewError};
use crate::handle::ObjectHandle;
use crate::heap::SoaHeap;

/// The lane -> (block, slot) assignment arithmetic of one do-all sub-pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationPlan {
    /// Number of allocated blocks in the snapshot (`r`).
    pub num_blocks: usize,
    /// Objects per block (`n_t`).
    pub capacity: u32,
    /// Number of logical lanes (`n`).
    pub num_lanes: usize,
}

impl EnumerationPlan {
    pub fn new(num_blocks: usize, capacity: u32, num_lanes: usize) -> Self {
        EnumerationPlan {
            num_blocks,
            capacity,
            num_lanes,
        }
    }

    /// Total (block, slot) pairs the plan must cover.
    pub fn total_objects(&self) -> usize {
        self.num_blocks * self.capacity as usize
    }

    /// A plan visits every pair exactly once iff the lane count is a
    /// multiple of the capacity, or no lane needs a second round.
    pub fn is_valid(&self) -> bool {
        self.num_lanes.is_multiple_of(self.capacity as usize) || self.num_lanes >= self.total_objects()
    }

    /// The slot position lane `tid` owns in every block it touches.
    pub fn slot_for_lane(&self, tid: usize) -> u32 {
        debug_assert!(tid < self.num_lanes);
        (tid % self.capacity as usize) as u32
    }

    /// How many blocks lane `tid` processes.
    pub fn blocks_for_lane(&self, tid: usize) -> usize {
        debug_assert!(tid < self.num_lanes);
        self.total_objects()
            .saturating_sub(tid)
            .div_ceil(self.num_lanes)
    }

    /// Index into the block snapshot for lane `tid`'s `k`-th round.
    pub fn block_index_for_lane(&self, tid: usize, k: usize) -> usize {
        debug_assert!(k < self.blocks_for_lane(tid));
        (tid + k * self.num_lanes) / self.capacity as usize
    }
}

/// Picks a lane count for `total = r * n_t` objects that (a) satisfies the
/// exactly-once validity condition and (b) gives every worker several lane
/// groups to balance load.
pub(crate) fn choose_lane_count(
    total: usize,
    capacity: u32,
    workers: usize,
    lane_width: u32,
) -> usize {
    debug_assert!(total > 0);
    let w = lane_width as usize;
    let target = workers * w * 8;
    if total <= target {
        // One round per lane: valid because n >= total.
        return total.div_ceil(w) * w;
    }
    // Multi-round: a multiple of the capacity is always valid.
    let n = target / capacity as usize * capacity as usize;
    if n == 0 {
        total.div_ceil(w) * w
    } else {
        n
    }
}

/// Outcome collector shared by the workers of one pass: the first error and
/// the first panic observed (insertion order under contention is arbitrary).
#[derive(Default)]
struct PassOutcome {
    error: Mutex<Option<AllocError>>,
    panic: Mutex<Option<Box<dyn std::any::Any + Send>>>,
}

impl PassOutcome {
    fn record_error(&self, e: AllocError) {
        self.error.lock().unwrap().get_or_insert(e);
    }

    fn record_panic(&self, p: Box<dyn std::any::Any + Send>) {
        self.panic.lock().unwrap().get_or_insert(p);
    }

    fn finish(self) -> Result<(), AllocError> {
        if let Some(p) = self.panic.into_inner().unwrap() {
            resume_unwind(p);
        }
        match self.error.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl SoaHeap {
    /// Applies `visitor` to every live object of `type_id` — including all
    /// its subtypes — in parallel on the configured worker threads.
    ///
    /// Visitors may read and write fields of any object, allocate objects of
    /// any type, and deallocate **their own** object. See the module docs
    /// for the exact snapshot semantics. The pass drains even on failure;
    /// the first visitor error (or panic) is surfaced afterwards.
    ///
    /// The heap must not be mutated by threads outside the pass while it
    /// runs.
    pub fn parallel_do<F>(&self, type_id: u8, visitor: F) -> Result<(), AllocError>
    where
        F: Fn(&SoaHeap, ObjectHandle) -> Result<(), AllocError> + Sync,
    {
        let outcome = PassOutcome::default();
        for t in self.registry().family(type_id) {
            self.run_sub_pass(t, &visitor, &outcome);
        }
        outcome.finish()
    }

    fn run_sub_pass<F>(&self, t: u8, visitor: &F, outcome: &PassOutcome)
    where
        F: Fn(&SoaHeap, ObjectHandle) -> Result<(), AllocError> + Sync,
    {
        // Snapshot: fix the block set and copy allocation -> iteration bits.
        // Nothing else mutates the heap between here and the visits (the
        // previous sub-pass has fully drained), so this is a consistent cut.
        let blocks = self.allocated_of(t).indices();
        if blocks.is_empty() {
            return;
        }
        for &b in &blocks {
            let bits = self.arena().alloc_bitmap(b).load(SeqCst);
            self.arena().iter_bitmap(b).store(bits, SeqCst);
        }

        let capacity = self.capacity(t);
        let total = blocks.len() * capacity as usize;
        let workers = self.worker_threads();
        let plan = EnumerationPlan::new(
            blocks.len(),
            capacity,
            choose_lane_count(total, capacity, workers, self.lane_width()),
        );
        debug_assert!(plan.is_valid());

        if workers == 1 {
            self.run_lane_groups(t, &plan, &blocks, 0, 1, visitor, outcome);
        } else {
            thread::scope(|s| {
                for w in 0..workers {
                    let blocks = &blocks;
                    let plan = &plan;
                    s.spawn(move || {
                        self.run_lane_groups(t, plan, blocks, w, workers, visitor, outcome);
                    });
                }
            });
        }
    }

    /// Runs every lane group `g` with `g % workers == worker`. Within a
    /// group, rounds are the outer loop and lanes the inner one, so the
    /// visits of one round hit consecutive slots of the same few blocks.
    #[allow(clippy::too_many_arguments)]
    fn run_lane_groups<F>(
        &self,
        t: u8,
        plan: &EnumerationPlan,
        blocks: &[usize],
        worker: usize,
        workers: usize,
        visitor: &F,
        outcome: &PassOutcome,
    ) where
        F: Fn(&SoaHeap, ObjectHandle) -> Result<(), AllocError> + Sync,
    {
        let w = self.lane_width() as usize;
        let n = plan.num_lanes;
        let total = plan.total_objects();
        let capacity = plan.capacity as usize;
        let num_groups = n.div_ceil(w);
        for g in (worker..num_groups).step_by(workers) {
            let lane_lo = g * w;
            let lane_hi = ((g + 1) * w).min(n);
            let rounds = total.saturating_sub(lane_lo).div_ceil(n);
            for k in 0..rounds {
                for lane in lane_lo..lane_hi {
                    let idx = lane + k * n;
                    if idx >= total {
                        break; // later lanes of this group are done too
                    }
                    let bid = blocks[idx / capacity];
                    let slot = (lane % capacity) as u32;
                    self.visit_slot(t, plan.capacity, bid, slot, visitor, outcome);
                }
            }
        }
    }

    fn visit_slot<F>(
        &self,
        t: u8,
        capacity: u32,
        bid: usize,
        slot: u32,
        visitor: &F,
        outcome: &PassOutcome,
    ) where
        F: Fn(&SoaHeap, ObjectHandle) -> Result<(), AllocError> + Sync,
    {
        // Guard 1: the block may have been emptied, reclaimed, and reused
        // for another type since the snapshot.
        if self.arena().type_id(bid).load(SeqCst) != t {
            return;
        }
        // Guard 2: only slots live at snapshot time are visited. A reused
        // block (even for the same type) starts with a zeroed iteration
        // bitmap, so its new occupants are skipped as well.
        let iter = self.arena().iter_bitmap(bid).load(SeqCst);
        if iter & (1 << slot) == 0 {
            return;
        }
        let h = ObjectHandle::encode(t, capacity, bid, slot);
        match catch_unwind(AssertUnwindSafe(|| visitor(self, h))) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => outcome.record_error(e),
            Err(p) => outcome.record_panic(p),
        }
    }

    /// Creates `count` objects of `type_id` in parallel and runs `init` on
    /// each, passing the object's index in `0..count`. Returns the handles
    /// in index order. On exhaustion, every object that was created (and
    /// initialized) is returned inside the error; the caller decides whether
    /// to keep or free them.
    pub fn parallel_new<F>(
        &self,
        type_id: u8,
        count: usize,
        init: F,
    ) -> Result<Vec<ObjectHandle>, BulkNewError>
    where
        F: Fn(&SoaHeap, ObjectHandle, usize) + Sync,
    {
        if count == 0 {
            return Ok(Vec::new());
        }
        let workers = self.worker_threads().min(count.div_ceil(self.lane_width() as usize));
        let chunk = count.div_ceil(workers);
        let mut results: Vec<(Vec<ObjectHandle>, bool)> = Vec::new();
        if workers == 1 {
            results.push(self.create_range(type_id, 0, count, 0, &init));
        } else {
            thread::scope(|s| {
                let joins: Vec<_> = (0..workers)
                    .map(|w| {
                        let init = &init;
                        let lo = w * chunk;
                        let hi = ((w + 1) * chunk).min(count);
                        s.spawn(move || self.create_range(type_id, lo, hi, w as u64, init))
                    })
                    .collect();
                results.extend(joins.into_iter().map(|j| j.join().unwrap()));
            });
        }
        let exhausted = results.iter().any(|(_, oom)| *oom);
        let handles: Vec<ObjectHandle> = results.into_iter().flat_map(|(v, _)| v).collect();
        if exhausted {
            Err(BulkNewError {
                created: handles,
                requested: count,
            })
        } else {
            Ok(handles)
        }
    }

    /// One worker's share of a bulk create: objects `lo..hi`, allocated in
    /// lane-width batches. Returns the handles plus an exhaustion flag.
    fn create_range<F>(
        &self,
        type_id: u8,
        lo: usize,
        hi: usize,
        worker: u64,
        init: &F,
    ) -> (Vec<ObjectHandle>, bool)
    where
        F: Fn(&SoaHeap, ObjectHandle, usize) + Sync,
    {
        let mut out = Vec::with_capacity(hi - lo);
        let mut seed = mix(self.base_seed() ^ (worker.wrapping_mul(0xA076_1D64_78BD_642F)));
        let batch_size = self.lane_width() as usize;
        let mut next = lo;
        while next < hi {
            let want = (hi - next).min(batch_size);
            let before = out.len();
            let res = self.allocate_batch_seeded(type_id, want, seed, &mut out);
            for (i, &h) in out[before..].iter().enumerate() {
                init(self, h, next + i);
            }
            next += out.len() - before;
            seed = seed.wrapping_add(1);
            if res.is_err() {
                return (out, true);
            }
        }
        (out, false)
    }

    /// Applies `visit` sequentially — on the calling thread, in block order
    /// then slot order — to every object of `type_id` (and subtypes) whose
    /// iteration bit is set. The iteration snapshot is **not** refreshed:
    /// inside a [`parallel_do`](Self::parallel_do) visitor this iterates
    /// exactly the running pass's snapshot, which is what makes
    /// all-pairs interactions (each visit scanning all objects) safe while
    /// the outer pass is mutating iteration-irrelevant state. Outside a
    /// pass, call
    /// [`refresh_iteration_bitmaps`](Self::refresh_iteration_bitmaps) first.
    pub fn device_do<F>(&self, type_id: u8, mut visit: F)
    where
        F: FnMut(&SoaHeap, ObjectHandle),
    {
        for t in self.registry().family(type_id) {
            let capacity = self.capacity(t);
            for bid in self.allocated_of(t).indices() {
                if self.arena().type_id(bid).load(SeqCst) != t {
                    continue;
                }
                let iter = self.arena().iter_bitmap(bid).load(SeqCst);
                for slot in 0..capacity {
                    if iter & (1 << slot) != 0 {
                        visit(self, ObjectHandle::encode(t, capacity, bid, slot));
                    }
                }
            }
        }
    }

    /// Copies the allocation bitmaps of `type_id` (and subtypes) into the
    /// iteration bitmaps, making the current live set visible to
    /// [`device_do`](Self::device_do). Quiescent state only.
    pub fn refresh_iteration_bitmaps(&self, type_id: u8) {
        for t in self.registry().family(type_id) {
            for bid in self.allocated_of(t).indices() {
                let bits = self.arena().alloc_bitmap(bid).load(SeqCst);
                self.arena().iter_bitmap(bid).store(bits, SeqCst);
            }
        }
    }
}

/// Cheap 64-bit mix to decorrelate worker seeds.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
