//! The block arena: a contiguous heap of `M` equal-size blocks.
//!
//! Every block, regardless of the type it currently holds, has the same
//! layout at the same offsets:
//!
//! ```text
//! +0   object allocation bitmap   (AtomicU64; bit s = slot s in use)
//! +8   object iteration bitmap    (AtomicU64; snapshot for do-all passes)
//! +16  type id                    (AtomicU8;  0 = free/invalid)
//! +64  data segment               (one SOA array per field, 64-byte aligned)
//! ```
//!
//! The uniform header is what makes optimistic concurrent allocation safe: a
//! thread can flip bits in the allocation bitmap of *any* block and reason
//! about the outcome afterwards, because the bitmap means the same thing no
//! matter which type the block holds (or whether it was concurrently
//! reinitialized).
//!
//! A block of capacity `N < 64` keeps its top `64 - N` bitmap bits permanently
//! set ("padding"), so "every bit set" always means "no free slot" and a fully
//! set bitmap doubles as the *invalidated* marker used for safe reclamation.
//!
//! This module owns the raw memory and the slot-level bitmap transitions;
//! block *lifecycle* (which block is free/active, invalidation retry loops) is
//! orchestrated by the heap on top of these primitives.

use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::ptr::NonNull;
use std::sync::atomic::{fence, AtomicU64, AtomicU8, Ordering::SeqCst};

/// Byte size of the fixed header at the start of every block.
pub(crate) const HEADER_BYTES: usize = 64;
const ALLOC_BITMAP_OFFSET: usize = 0;
const ITER_BITMAP_OFFSET: usize = 8;
const TYPE_ID_OFFSET: usize = 16;

/// Allocation bitmap of a freshly initialized block of the given capacity:
/// slots `0..capacity` free (0), padding bits `capacity..64` set (1).
#[inline]
pub(crate) fn padding_mask(capacity: u32) -> u64 {
    debug_assert!((1..=64).contains(&capacity));
    match capacity {
        64 => 0,
        n => u64::MAX << n,
    }
}

/// Fill level of a block right after a reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FillState {
    /// Free slots remain.
    Regular,
    /// This reservation set the last free bit; the caller owns the
    /// active -> inactive transition.
    Full,
}

/// Fill level of a block right before a deallocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DeallocState {
    Regular,
    /// The block was full; the caller owns the inactive -> active transition.
    First,
    /// This deallocation freed the last live object; the caller should try to
    /// invalidate and reclaim the block.
    Empty,
}

/// Contiguous 64-byte-aligned heap of `num_blocks` blocks.
pub(crate) struct Arena {
    base: NonNull<u8>,
    layout: Layout,
    block_stride: usize,
    num_blocks: usize,
}

// The arena hands out &AtomicU64/&AtomicU8 views and raw data pointers whose
// disciplined use is enforced by the allocator on top; the memory itself is
// plain bytes owned by this struct.
unsafe impl Send for Arena {}
unsafe impl Sync for Arena {}

impl Arena {
    /// Allocates a zeroed arena with data segments of `data_bytes` per block
    /// (rounded up so every block is a multiple of 64 bytes).
    pub(crate) fn new(num_blocks: usize, data_bytes: usize) -> Arena {
        assert!(num_blocks >= 1, "arena needs at least one block");
        assert!((num_blocks as u64) < (1 << 44), "block index must fit the handle encoding");
        let block_stride = HEADER_BYTES + data_bytes.div_ceil(64) * 64;
        let layout = Layout::from_size_align(num_blocks * block_stride, 64).unwrap();
        // SAFETY: layout has nonzero size (stride >= 64, num_blocks >= 1).
        let base = unsafe { alloc_zeroed(layout) };
        let base = NonNull::new(base).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        Arena {
            base,
            layout,
            block_stride,
            num_blocks,
        }
    }

    pub(crate) fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub(crate) fn block_stride(&self) -> usize {
        self.block_stride
    }

    #[inline]
    fn block_ptr(&self, bid: usize) -> *mut u8 {
        debug_assert!(bid < self.num_blocks, "block {bid} out of range");
        // SAFETY: bid is in range, so the offset stays inside the allocation.
        unsafe { self.base.as_ptr().add(bid * self.block_stride) }
    }

    /// The object allocation bitmap of block `bid`.
    #[inline]
    pub(crate) fn alloc_bitmap(&self, bid: usize) -> &AtomicU64 {
        // SAFETY: offset 0 of a 64-byte-aligned live block; AtomicU64 is
        // layout-compatible with the zero-initialized u64 there.
        unsafe { &*(self.block_ptr(bid).add(ALLOC_BITMAP_OFFSET) as *const AtomicU64) }
    }

    /// The object iteration bitmap of block `bid`.
    #[inline]
    pub(crate) fn iter_bitmap(&self, bid: usize) -> &AtomicU64 {
        // SAFETY: as in `alloc_bitmap`; offset 8 keeps 8-byte alignment.
        unsafe { &*(self.block_ptr(bid).add(ITER_BITMAP_OFFSET) as *const AtomicU64) }
    }

    /// The type id byte of block `bid`.
    #[inline]
    pub(crate) fn type_id(&self, bid: usize) -> &AtomicU8 {
        // SAFETY: offset 16 of a live block.
        unsafe { &*(self.block_ptr(bid).add(TYPE_ID_OFFSET) as *const AtomicU8) }
    }

    /// Start of the SOA data segment of block `bid` (64-byte aligned).
    #[inline]
    pub(crate) fn data_ptr(&self, bid: usize) -> *mut u8 {
        // SAFETY: the header is within the block and stride > HEADER_BYTES.
        unsafe { self.block_ptr(bid).add(HEADER_BYTES) }
    }

    /// Reserves up to `want` object slots in block `bid` by atomically
    /// flipping free bits 0 -> 1, preferring bits near the seed-derived
    /// rotation point.
    ///
    /// Returns the claimed slots as a bitmask, plus [`FillState::Full`] iff
    /// *this call* set the last free bit. Returns fewer slots than `want`
    /// (possibly with `Regular`) when the block filled up mid-request, and
    /// `None` when not a single bit could be claimed — the block is full or
    /// invalidated. Calling this on a free, full, or invalidated block is
    /// safe; it simply fails.
    pub(crate) fn reserve(&self, bid: usize, want: u32, seed: u64) -> Option<(u64, FillState)> {
        debug_assert!(want >= 1);
        let bitmap = self.alloc_bitmap(bid);
        let rot = (seed % 64) as u32;
        let mut claimed: u64 = 0;
        let mut remaining = want;
        loop {
            let current = bitmap.load(SeqCst);
            let avail = !current;
            if avail == 0 {
                return if claimed == 0 {
                    None
                } else {
                    Some((claimed, FillState::Regular))
                };
            }
            let pick = lowest_rotated_bits(avail, remaining, rot);
            let before = bitmap.fetch_or(pick, SeqCst);
            let got = pick & !before;
            claimed |= got;
            remaining -= got.count_ones();
            if before | pick == u64::MAX && before != u64::MAX {
                // This fetch_or performed the not-full -> full transition (it
                // flipped at least one bit, so `claimed` is nonempty).
                return Some((claimed, FillState::Full));
            }
            if remaining == 0 {
                return Some((claimed, FillState::Regular));
            }
            // Some picked bits were taken concurrently; re-read and retry.
        }
    }

    /// Frees one object slot and classifies the block's fill level *before*
    /// the flip: `First` for a previously full block, `Empty` when this call
    /// removed the last live object (capacity-adjusted: the padding bits are
    /// always set), `Regular` otherwise. For capacity-1 blocks both
    /// conditions coincide and `Empty` wins, so such blocks remain
    /// reclaimable.
    pub(crate) fn deallocate_slot(&self, bid: usize, slot: u32, capacity: u32) -> DeallocState {
        debug_assert!(slot < capacity);
        let mask = 1u64 << slot;
        let before = self.alloc_bitmap(bid).fetch_and(!mask, SeqCst);
        debug_assert!(
            before & mask != 0,
            "double free: block {bid} slot {slot} was not allocated"
        );
        let popc = before.count_ones();
        if popc == 64 - capacity + 1 {
            DeallocState::Empty
        } else if popc == 64 {
            DeallocState::First
        } else {
            DeallocState::Regular
        }
    }

    /// Publishes block `bid` as a fresh, empty block of `type_id`: stores the
    /// type, fences, clears the iteration snapshot, then opens the slots by
    /// storing the padding mask. The fence guarantees that any thread that
    /// sees free slots also sees the new type. The caller must be the
    /// exclusive owner (it claimed `bid` from the free bitmap).
    pub(crate) fn initialize(&self, bid: usize, type_id: u8, capacity: u32) {
        self.type_id(bid).store(type_id, SeqCst);
        fence(SeqCst);
        // A recycled block must not carry a stale iteration snapshot into the
        // next do-all pass; clear it before the slots become visible.
        self.iter_bitmap(bid).store(0, SeqCst);
        self.alloc_bitmap(bid).store(padding_mask(capacity), SeqCst);
    }

    /// First half of block invalidation: atomically sets all 64 allocation
    /// bits and returns the previous value. (The heap interprets the result
    /// and rolls back with [`rollback_invalidation`](Self::rollback_invalidation)
    /// if live slots were caught.)
    pub(crate) fn invalidate_all(&self, bid: usize) -> u64 {
        self.alloc_bitmap(bid).fetch_or(u64::MAX, SeqCst)
    }

    /// Rolls an unsuccessful invalidation back to `before` (the bits this
    /// caller flipped are exactly the zero bits of `before`). Returns the
    /// bitmap value just before the rollback, which tells the heap whether a
    /// concurrent deallocation hit the fully-invalidated window.
    pub(crate) fn rollback_invalidation(&self, bid: usize, before: u64) -> u64 {
        self.alloc_bitmap(bid).fetch_and(before, SeqCst)
    }
}

impl Drop for Arena {
    fn drop(&mut self) {
        // SAFETY: base/layout came from alloc_zeroed with this exact layout.
        unsafe { dealloc(self.base.as_ptr(), self.layout) }
    }
}

/// Up to `k` set bits of `avail`, preferring positions at/after the rotation
/// point: rotate right, peel lowest set bits, rotate back.
#[inline]
fn lowest_rotated_bits(avail: u64, k: u32, rot: u32) -> u64 {
    let mut rest = avail.rotate_right(rot);
    let mut picked = 0u64;
    for _ in 0..k {
        if rest == 0 {
            break;
        }
        picked |= rest & rest.wrapping_neg();
        rest &= rest - 1;
    }
    picked.rotate_left(rot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    fn slots_of(mask: u64) -> Vec<u32> {
        let mut out = Vec::new();
        let mut m = mask;
        while m != 0 {
            out.push(m.trailing_zeros());
            m &= m - 1;
        }
        out
    }

    #[test]
    fn header_offsets_are_uniform_constants() {
        let arena = Arena::new(4, 256);
        let base0 = arena.block_ptr(0) as usize;
        for bid in 0..4 {
            let base = arena.block_ptr(bid) as usize;
            assert_eq!(base - base0, bid * arena.block_stride());
            assert_eq!(arena.alloc_bitmap(bid) as *const _ as usize - base, 0);
            assert_eq!(arena.iter_bitmap(bid) as *const _ as usize - base, 8);
            assert_eq!(arena.type_id(bid) as *const _ as usize - base, 16);
            assert_eq!(arena.data_ptr(bid) as usize - base, 64);
            assert_eq!(base % 64, 0, "blocks are 64-byte aligned");
            assert_eq!(arena.data_ptr(bid) as usize % 64, 0);
        }
        // 256 data bytes round to 256; stride = 64 + 256.
        assert_eq!(arena.block_stride(), 320);
        // Data bytes that are not a multiple of 64 round up.
        assert_eq!(Arena::new(1, 130).block_stride(), 64 + 192);
    }

    #[test]
    fn padding_mask_goldens() {
        assert_eq!(padding_mask(64), 0);
        assert_eq!(padding_mask(40), 0xFFFF_FF00_0000_0000);
        assert_eq!(padding_mask(1), !1u64);
        assert_eq!(padding_mask(63), 1u64 << 63);
    }

    #[test]
    fn fresh_arena_reads_as_free_type() {
        let arena = Arena::new(2, 64);
        assert_eq!(arena.type_id(0).load(SeqCst), 0);
        assert_eq!(arena.alloc_bitmap(0).load(SeqCst), 0);
        assert_eq!(arena.iter_bitmap(1).load(SeqCst), 0);
    }

    #[test]
    fn initialize_sets_type_and_padding() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 7, 40);
        assert_eq!(arena.type_id(0).load(SeqCst), 7);
        assert_eq!(arena.alloc_bitmap(0).load(SeqCst), padding_mask(40));
        assert_eq!(arena.iter_bitmap(0).load(SeqCst), 0);

        arena.initialize(0, 3, 64);
        assert_eq!(arena.alloc_bitmap(0).load(SeqCst), 0);
    }

    #[test]
    fn initialize_clears_stale_iteration_snapshot() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 7, 64);
        arena.iter_bitmap(0).store(0xDEAD, SeqCst);
        arena.initialize(0, 8, 40);
        assert_eq!(arena.iter_bitmap(0).load(SeqCst), 0);
    }

    #[test]
    fn reserve_single_slot_until_full() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 64);
        let mut seen = Vec::new();
        for i in 0..64 {
            let (mask, state) = arena.reserve(0, 1, 0).expect("free slots remain");
            let slots = slots_of(mask);
            assert_eq!(slots.len(), 1);
            seen.push(slots[0]);
            let want = if i == 63 { FillState::Full } else { FillState::Regular };
            assert_eq!(state, want, "reservation {i}");
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>(), "each slot exactly once");
        assert!(arena.reserve(0, 1, 0).is_none(), "full block fails");
    }

    #[test]
    fn reserve_on_63_of_64_returns_last_slot_as_full() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 64);
        arena.alloc_bitmap(0).store(!(1u64 << 17), SeqCst);
        let (mask, state) = arena.reserve(0, 1, 5).unwrap();
        assert_eq!(slots_of(mask), vec![17]);
        assert_eq!(state, FillState::Full);
    }

    #[test]
    fn reserve_respects_capacity_padding() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 2, 40);
        let mut got = Vec::new();
        while let Some((mask, _)) = arena.reserve(0, 1, 99) {
            got.extend(slots_of(mask));
        }
        got.sort_unstable();
        assert_eq!(got, (0..40).collect::<Vec<_>>(), "only real slots handed out");
    }

    #[test]
    fn reserve_multi_slot_partial_fill() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 64);
        // Take 60 of 64 slots, then ask for 10: only 4 remain.
        let (mask, state) = arena.reserve(0, 60, 3).unwrap();
        assert_eq!(mask.count_ones(), 60);
        assert_eq!(state, FillState::Regular);
        let (mask2, state2) = arena.reserve(0, 10, 3).unwrap();
        assert_eq!(mask2.count_ones(), 4, "partial fill");
        assert_eq!(state2, FillState::Full);
        assert_eq!(mask | mask2, u64::MAX);
        assert!(arena.reserve(0, 4, 3).is_none());
    }

    #[test]
    fn reserve_invalidated_block_fails() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 64);
        arena.alloc_bitmap(0).store(u64::MAX, SeqCst);
        assert!(arena.reserve(0, 4, 0).is_none());
    }

    #[test]
    fn rotation_spreads_first_pick() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 64);
        let (mask, _) = arena.reserve(0, 1, 17).unwrap();
        assert_eq!(slots_of(mask), vec![17], "empty block: rotation point wins");
        let (mask2, _) = arena.reserve(0, 2, 40).unwrap();
        assert_eq!(slots_of(mask2), vec![40, 41]);
    }

    #[test]
    fn deallocate_classification_matches_brute_force() {
        // Single-threaded simulator: for each capacity, fill some slots, then
        // free them one by one and check the classification against the live
        // count the model tracks.
        for capacity in [1u32, 2, 3, 40, 63, 64] {
            let arena = Arena::new(1, 512);
            arena.initialize(0, 9, capacity);
            let full = capacity; // fill completely
            let mut live: Vec<u32> = Vec::new();
            for _ in 0..full {
                let (mask, _) = arena.reserve(0, 1, 0).unwrap();
                live.extend(slots_of(mask));
            }
            // Free in reverse order.
            while let Some(slot) = live.pop() {
                let was_full = live.len() + 1 == capacity as usize;
                let now_empty = live.is_empty();
                let got = arena.deallocate_slot(0, slot, capacity);
                let want = if now_empty {
                    DeallocState::Empty
                } else if was_full {
                    DeallocState::First
                } else {
                    DeallocState::Regular
                };
                assert_eq!(got, want, "capacity {capacity}, {} live", live.len());
            }
            assert_eq!(arena.alloc_bitmap(0).load(SeqCst), padding_mask(capacity));
        }
    }

    #[test]
    fn capacity_one_dealloc_reports_empty_not_first() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 1, 1);
        let (mask, state) = arena.reserve(0, 1, 0).unwrap();
        assert_eq!(slots_of(mask), vec![0]);
        assert_eq!(state, FillState::Full, "capacity-1 fills immediately");
        assert_eq!(arena.deallocate_slot(0, 0, 1), DeallocState::Empty);
    }

    #[test]
    fn invalidation_round_trip() {
        let arena = Arena::new(1, 512);
        arena.initialize(0, 4, 40);

        // Empty block: invalidation catches only padding bits.
        let before = arena.invalidate_all(0);
        assert_eq!(before, padding_mask(40), "empty block invalidates cleanly");
        assert_eq!(arena.alloc_bitmap(0).load(SeqCst), u64::MAX);

        // Re-initialize, occupy one slot: invalidation must be rolled back.
        arena.initialize(0, 4, 40);
        let (mask, _) = arena.reserve(0, 1, 0).unwrap();
        let before = arena.invalidate_all(0);
        assert_ne!(before, padding_mask(40), "live slot caught");
        let before_rollback = arena.rollback_invalidation(0, before);
        assert_eq!(before_rollback, u64::MAX, "no concurrent deallocation");
        assert_eq!(
            arena.alloc_bitmap(0).load(SeqCst),
            padding_mask(40) | mask,
            "rollback restored exactly the pre-invalidation state"
        );
    }

    #[test]
    fn concurrent_reserve_hands_out_disjoint_slots() {
        let arena = Arc::new(Arena::new(1, 512));
        arena.initialize(0, 1, 64);
        let mut joins = Vec::new();
        for t in 0..4u64 {
            let arena = Arc::clone(&arena);
            joins.push(thread::spawn(move || {
                let mut got = Vec::new();
                while let Some((mask, _)) = arena.reserve(0, 3, t * 13) {
                    got.extend(slots_of(mask));
                }
                got
            }));
        }
        let mut all: Vec<u32> = joins.into_iter().flat_map(|j| j.join().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>(), "no slot claimed twice");
    }

    #[test]
    fn lowest_rotated_bits_picks_from_rotation_point() {
        assert_eq!(lowest_rotated_bits(u64::MAX, 1, 0), 1);
        assert_eq!(lowest_rotated_bits(u64::MAX, 1, 17), 1 << 17);
        assert_eq!(lowest_rotated_bits(u64::MAX, 3, 62), (1 << 62) | (1 << 63) | 1);
        assert_eq!(lowest_rotated_bits(0b1010, 2, 0), 0b1010);
        assert_eq!(lowest_rotated_bits(0b1010, 5, 0), 0b1010, "capped at popcount");
        assert_eq!(lowest_rotated_bits(0, 4, 9), 0);
    }
}
