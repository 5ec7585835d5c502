//! Lock-free hierarchical bitmap.
//!
//! A [`HierarchicalBitmap`] tracks `N` boolean resources in a leaf level of
//! 64-bit *containers*, plus a tower of summary levels: bit `i` of level `l+1`
//! is 1 iff container `i` of level `l` has at least one set bit. The top level
//! always fits in a single container, so a search for an arbitrary set bit
//! walks at most `ceil(log64(N))` words instead of scanning the whole leaf
//! level.
//!
//! All single-bit operations and [`try_find_set`](HierarchicalBitmap::try_find_set)
//! are safe for unrestricted concurrent use. Summary levels are maintained
//! *eventually*: while operations are in flight, an upper-level bit may
//! disagree with its container, which can make `try_find_set` fail transiently
//! even though set bits exist. Callers are expected to retry. Once all callers
//! have quiesced, every level is consistent again — provided usage was *legal*:
//! spinning [`set`](HierarchicalBitmap::set) / [`clear`](HierarchicalBitmap::clear)
//! calls must be paired with state transitions (never two net sets on an
//! already-set bit), otherwise a spinning call never observes the transition
//! it is waiting for. Debug builds turn that latent deadlock into a panic
//! after a bounded number of retries.
//!
//! # Contention
//!
//! Searches take a `seed`: before the find-first-set in each container, the
//! word is rotated by `seed % 64`, so callers with different seeds prefer
//! different parts of the bitmap and collide less on the subsequent atomic.
//! Callers that retry should increment the seed.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};

/// Retries after which a spinning operation panics in debug builds. Release
/// builds spin indefinitely (an unbounded wait is the documented behavior for
/// illegal usage; the bound exists to make such bugs diagnosable in tests).
const DEBUG_SPIN_LIMIT: u64 = 10_000_000;

#[inline]
fn spin(count: &mut u64) {
    *count += 1;
    if cfg!(debug_assertions) && *count >= DEBUG_SPIN_LIMIT {
        panic!(
            "bitmap operation made no progress after {DEBUG_SPIN_LIMIT} retries; \
             this indicates an illegal set/clear pairing"
        );
    }
    std::hint::spin_loop();
}

/// Initial fill of a freshly constructed bitmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitmapInit {
    /// Every tracked bit starts at 1 (summary levels follow).
    AllSet,
    /// Every bit starts at 0.
    AllClear,
}

/// One level of the hierarchy: `bits` logical bits stored in 64-bit words.
struct Level {
    bits: usize,
    words: Box<[AtomicU64]>,
}

impl Level {
    fn new(bits: usize, init: BitmapInit) -> Self {
        let words = (0..bits.div_ceil(64))
            .map(|w| {
                AtomicU64::new(match init {
                    BitmapInit::AllClear => 0,
                    // Padding bits past `bits` stay 0 even for an all-set fill.
                    BitmapInit::AllSet => low_mask(bits - w * 64),
                })
            })
            .collect();
        Level { bits, words }
    }
}

/// The low `count` bits, saturating at a full word.
#[inline]
fn low_mask(count: usize) -> u64 {
    if count >= 64 {
        u64::MAX
    } else {
        (1u64 << count) - 1
    }
}

/// Multi-level concurrent bitmap over `num_bits` leaf bits.
pub struct HierarchicalBitmap {
    num_bits: usize,
    /// `levels[0]` is the leaf; `levels.last()` is a single container.
    levels: Box<[Level]>,
}

impl HierarchicalBitmap {
    /// Creates a bitmap tracking `num_bits` bits, all set or all clear.
    ///
    /// Level sizes follow the recurrence `size(l+1) = ceil(size(l) / 64)`
    /// down to a single bit. Leaf positions `>= num_bits` are padding and are
    /// permanently 0; summary levels never report them.
    ///
    /// # Panics
    ///
    /// Panics if `num_bits` is zero.
    pub fn new(num_bits: usize, init: BitmapInit) -> Self {
        assert!(num_bits >= 1, "bitmap must track at least one bit");
        let mut sizes = vec![num_bits];
        while *sizes.last().unwrap() > 1 {
            let next = sizes.last().unwrap().div_ceil(64);
            sizes.push(next);
        }
        let levels = sizes.into_iter().map(|b| Level::new(b, init)).collect();
        HierarchicalBitmap { num_bits, levels }
    }

    /// Number of tracked (leaf) bits.
    pub fn num_bits(&self) -> usize {
        self.num_bits
    }

    /// Logical size of each level, leaf first. Introspection for diagnostics.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.bits).collect()
    }

    /// Current value of leaf bit `pos`. No side effects.
    ///
    /// # Panics
    ///
    /// Panics if `pos >= num_bits()`.
    pub fn get(&self, pos: usize) -> bool {
        assert!(pos < self.num_bits, "bit {pos} out of range");
        self.levels[0].words[pos / 64].load(SeqCst) & (1 << (pos % 64)) != 0
    }

    /// Atomically clears leaf bit `pos`. Returns `true` iff *this* call
    /// flipped it from 1 to 0.
    ///
    /// If the flip cleared the last set bit of its container, the summary bit
    /// one level up is cleared as well (with the retrying [`clear`]),
    /// recursively — the cascade completes before this call returns.
    ///
    /// [`clear`]: HierarchicalBitmap::clear
    ///
    /// # Panics
    ///
    /// Panics if `pos >= num_bits()`.
    pub fn try_clear(&self, pos: usize) -> bool {
        assert!(pos < self.num_bits, "bit {pos} out of range");
        self.try_clear_at(0, pos)
    }

    /// Atomically sets leaf bit `pos`. Returns `true` iff *this* call flipped
    /// it from 0 to 1. Mirrors [`try_clear`](Self::try_clear): setting the
    /// first bit of a container sets the summary bit one level up.
    ///
    /// # Panics
    ///
    /// Panics if `pos >= num_bits()`.
    pub fn try_set(&self, pos: usize) -> bool {
        assert!(pos < self.num_bits, "bit {pos} out of range");
        self.try_set_at(0, pos)
    }

    /// Clears leaf bit `pos`, retrying until this caller performed the 1->0
    /// flip itself. Blocks (spins) while the bit is already 0; the matching
    /// `set` must eventually arrive or the wait never ends — see the module
    /// docs on legality.
    pub fn clear(&self, pos: usize) {
        assert!(pos < self.num_bits, "bit {pos} out of range");
        self.clear_at(0, pos);
    }

    /// Sets leaf bit `pos`, retrying until this caller performed the 0->1
    /// flip itself. Counterpart of [`clear`](Self::clear).
    pub fn set(&self, pos: usize) {
        assert!(pos < self.num_bits, "bit {pos} out of range");
        self.set_at(0, pos);
    }

    fn try_clear_at(&self, level: usize, pos: usize) -> bool {
        let mask = 1u64 << (pos % 64);
        let prev = self.levels[level].words[pos / 64].fetch_and(!mask, SeqCst);
        if prev & mask == 0 {
            return false;
        }
        // This call cleared the container's last set bit: summarize upward.
        if prev.count_ones() == 1 && level + 1 < self.levels.len() {
            self.clear_at(level + 1, pos / 64);
        }
        true
    }

    fn try_set_at(&self, level: usize, pos: usize) -> bool {
        let mask = 1u64 << (pos % 64);
        let prev = self.levels[level].words[pos / 64].fetch_or(mask, SeqCst);
        if prev & mask != 0 {
            return false;
        }
        // This call set the container's first bit: summarize upward.
        if prev == 0 && level + 1 < self.levels.len() {
            self.set_at(level + 1, pos / 64);
        }
        true
    }

    fn clear_at(&self, level: usize, pos: usize) {
        let mut spins = 0;
        while !self.try_clear_at(level, pos) {
            spin(&mut spins);
        }
    }

    fn set_at(&self, level: usize, pos: usize) {
        let mut spins = 0;
        while !self.try_set_at(level, pos) {
            spin(&mut spins);
        }
    }

    /// Finds *some* set leaf bit, walking the hierarchy top-down and applying
    /// a seed-derived rotation before each find-first-set.
    ///
    /// The returned bit was set at the moment its word was read but may be
    /// stale by the time the caller acts on it. Returns `None` when a word
    /// along the walk read as zero — which can happen transiently even while
    /// set bits exist, because summary levels are only eventually consistent.
    /// `None` is an outcome to retry on, not an error.
    pub fn try_find_set(&self, seed: u64) -> Option<usize> {
        let rot = (seed % 64) as u32;
        let mut container = 0usize;
        for level in (0..self.levels.len()).rev() {
            let word = self.levels[level].words[container].load(SeqCst);
            let bit = rotated_first_set(word, rot)?;
            let idx = container * 64 + bit;
            if level == 0 {
                return Some(idx);
            }
            container = idx;
        }
        unreachable!("level 0 always returns")
    }

    /// Atomically claims an arbitrary set bit: finds one and clears it, so
    /// that exactly this caller performed the 1->0 flip. Returns the position.
    ///
    /// Retries (with an incremented seed) when the found bit was cleared by
    /// someone else first; returns `None` only when the *search* itself fails,
    /// i.e. no set bit could be found — possibly transiently, as in
    /// [`try_find_set`](Self::try_find_set).
    pub fn clear_any(&self, seed: u64) -> Option<usize> {
        let mut seed = seed;
        loop {
            let pos = self.try_find_set(seed)?;
            if self.try_clear(pos) {
                return Some(pos);
            }
            seed = seed.wrapping_add(1);
        }
    }

    /// Collects the positions of all set leaf bits into a compact vector, in
    /// unspecified order.
    ///
    /// Containers whose summary bit is clear are skipped entirely, so the cost
    /// is proportional to the populated part of the hierarchy, not to
    /// `num_bits`.
    ///
    /// # Quiescence
    ///
    /// Callers must guarantee that no mutation is in flight. Under concurrent
    /// mutation the result is unspecified (bits may be missed or duplicated
    /// while summaries are inconsistent).
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.descend(self.levels.len() - 1, 0, &mut out);
        out
    }

    fn descend(&self, level: usize, container: usize, out: &mut Vec<usize>) {
        let mut word = self.levels[level].words[container].load(SeqCst);
        while word != 0 {
            let bit = word.trailing_zeros() as usize;
            word &= word - 1;
            let idx = container * 64 + bit;
            if level == 0 {
                out.push(idx);
            } else {
                self.descend(level - 1, idx, out);
            }
        }
    }

    /// Number of set leaf bits. Quiescent callers only (plain popcount sweep).
    pub fn count_set(&self) -> usize {
        self.levels[0]
            .words
            .iter()
            .map(|w| w.load(SeqCst).count_ones() as usize)
            .sum()
    }

    /// Checks the full hierarchy invariant: every summary bit equals the OR of
    /// its container, and no level has padding bits set. Quiescent callers
    /// only. Returns a human-readable description of the first violation.
    pub fn verify_consistency(&self) -> Result<(), String> {
        for (l, level) in self.levels.iter().enumerate() {
            // Padding bits of the last word must be 0.
            let tail = level.bits % 64;
            if tail != 0 {
                let last = level.words.last().unwrap().load(SeqCst);
                if last & !low_mask(tail) != 0 {
                    return Err(format!("level {l}: padding bits set in last word"));
                }
            }
            if l + 1 == self.levels.len() {
                continue;
            }
            for (ci, word) in level.words.iter().enumerate() {
                let have = word.load(SeqCst) != 0;
                let upper =
                    self.levels[l + 1].words[ci / 64].load(SeqCst) & (1 << (ci % 64)) != 0;
                if have != upper {
                    return Err(format!(
                        "level {}: summary bit {ci} is {} but container OR is {}",
                        l + 1,
                        upper as u8,
                        have as u8
                    ));
                }
            }
        }
        Ok(())
    }

    /// Debug dump: one line per level, hex containers, leaf level first.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (l, level) in self.levels.iter().enumerate() {
            let _ = write!(out, "L{l}:");
            for w in level.words.iter() {
                let _ = write!(out, " 0x{:016X}", w.load(SeqCst));
            }
            out.push('\n');
        }
        out
    }
}

/// First set bit of `word` after rotating right by `rot`, mapped back to the
/// unrotated position. `None` for an all-zero word.
#[inline]
fn rotated_first_set(word: u64, rot: u32) -> Option<usize> {
    if word == 0 {
        return None;
    }
    let rotated = word.rotate_right(rot);
    Some(((rotated.trailing_zeros() + rot) % 64) as usize)
}
