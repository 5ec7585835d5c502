//! Wa-Tor: fish and sharks on a torus, driven by do-all passes.
//!
//! The world is a fixed grid of `cell` objects (wired to their four
//! neighbors at startup) plus dynamic `fish` and `shark` objects that move
//! between cells, breed, eat, and starve. All movement conflicts are
//! resolved by the *cells*: agents publish movement requests onto their
//! neighbors with an atomic bit-OR, then every cell picks at most one
//! requester (seeded by cell index and tick, so the outcome is independent
//! of scheduling), and finally agents that see themselves picked carry out
//! the move. One tick is eight passes:
//!
//! 1. cells clear their request mask and pick.
//! 2. fish request every adjacent free cell.
//! 3. free cells pick one requesting fish.
//! 4. fish move; a fish whose breed counter matured leaves offspring on
//!    its old cell, otherwise the old cell is emptied.
//! 5. cells clear again.
//! 6. sharks request adjacent fish cells, or free cells if no fish are near.
//! 7. non-shark cells pick one requesting shark (a cell holding a fish can
//!    be picked — the arriving shark eats the occupant).
//! 8. sharks eat, starve out, move, and breed.
//!
//! Sharks delete fish (pass 8 runs over sharks only, so the deleted objects
//! are never part of the running traversal), starved sharks delete
//! themselves, and offspring are allocated mid-pass; the object population
//! therefore churns continuously, which is exactly what makes this a good
//! stress for the allocator.
//!
//! Because every decision is keyed on (seed, tick, cell index) and never on
//! object placement, the species trajectory is identical for any worker
//! count and any allocation-retry setting.

use std::sync::atomic::Ordering::SeqCst;

use soa_heap::{AllocError, ObjectHandle, SoaHeap};

use crate::rng::{counter_rng, rand_below};
use crate::WorldError;

/// Agent base fields: current cell handle, breed counter.
const AG_CELL: usize = 0;
const AG_BREED: usize = 1;
/// Shark-only field: ticks since last meal.
const SH_STARVE: usize = 2;

/// Cell fields: occupant, picked requester, request mask, the four
/// neighbor handles (up, down, left, right), own grid index.
const CL_AGENT: usize = 0;
const CL_INCOMING: usize = 1;
const CL_REQUESTS: usize = 2;
const CL_NEIGHBOR0: usize = 3;
const CL_IDX: usize = 7;

/// RNG streams: ticks use `2 * tick + round`; initialization uses the top
/// of the stream space.
const STREAM_INIT_SPECIES: u64 = u64::MAX;
const STREAM_INIT_AGE: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug)]
pub struct WaTorConfig {
    pub width: usize,
    pub height: usize,
    /// Fraction of cells initially holding a fish.
    pub fish_fraction: f64,
    /// Fraction of cells initially holding a shark.
    pub shark_fraction: f64,
    /// A fish that moves with its breed counter at this value spawns.
    pub fish_breed: u32,
    pub shark_breed: u32,
    /// A shark going this many ticks without eating dies.
    pub shark_starve: u32,
    pub seed: u64,
    pub workers: usize,
    /// Fast-path attempts per allocation before claiming a fresh block.
    pub alloc_retries: u32,
    /// Arena size override; `None` sizes the arena from the grid.
    pub heap_bytes: Option<usize>,
    /// Traversal lane-group width override; `None` keeps the default.
    pub lane_width: Option<u32>,
}

impl Default for WaTorConfig {
    fn default() -> WaTorConfig {
        WaTorConfig {
            width: 64,
            height: 64,
            fish_fraction: 0.3,
            shark_fraction: 0.08,
            fish_breed: 6,
            shark_breed: 12,
            shark_starve: 6,
            seed: 7,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            alloc_retries: 5,
            heap_bytes: None,
            lane_width: None,
        }
    }
}

pub struct WaTor {
    heap: SoaHeap,
    cells: Vec<ObjectHandle>,
    cfg: WaTorConfig,
    tick: u64,
    fish_ty: u8,
    shark_ty: u8,
}

/// Torus neighbor in direction `d` (0 up, 1 down, 2 left, 3 right).
/// Opposite directions pair as `d ^ 1`.
fn neighbor_idx(width: usize, height: usize, idx: usize, d: usize) -> usize {
    let x = idx % width;
    let y = idx / width;
    match d {
        0 => ((y + height - 1) % height) * width + x,
        1 => ((y + 1) % height) * width + x,
        2 => y * width + (x + width - 1) % width,
        _ => y * width + (x + 1) % width,
    }
}

/// Index of the `k`-th set bit of `mask` (`k < mask.count_ones()`).
fn kth_set_bit(mask: u64, k: u32) -> usize {
    let mut m = mask;
    for _ in 0..k {
        m &= m - 1;
    }
    m.trailing_zeros() as usize
}

fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 / (1u64 << 53) as f64
}

impl WaTor {
    pub fn new(cfg: WaTorConfig) -> Result<WaTor, WorldError> {
        assert!(cfg.width >= 3 && cfg.height >= 3, "torus wrap needs 3x3 or larger");
        assert!(cfg.fish_fraction + cfg.shark_fraction <= 1.0);
        assert!(cfg.fish_breed >= 1 && cfg.shark_breed >= 1 && cfg.shark_starve >= 1);
        let n = cfg.width * cfg.height;

        let mut b = SoaHeap::builder();
        let agent_ty = b.register_base("agent", &[8, 4])?;
        let fish_ty = b.register_subtype("fish", agent_ty, &[])?;
        let shark_ty = b.register_subtype("shark", agent_ty, &[4])?;
        let cell_ty = b.register_type("cell", &[8, 8, 8, 8, 8, 8, 8, 4])?;
        if let Some(bytes) = cfg.heap_bytes {
            b.heap_bytes(bytes);
        } else {
            // Static cells plus churn headroom for the agent population
            // (never more than one agent per cell, but it fragments under
            // turnover).
            b.heap_blocks(n.div_ceil(12) + 3 * (n.div_ceil(64) + n.div_ceil(48)) + 64);
        }
        if let Some(w) = cfg.lane_width {
            b.lane_width(w);
        }
        b.worker_threads(cfg.workers);
        b.alloc_retries(cfg.alloc_retries);
        b.rng_seed(cfg.seed);
        let heap = b.build()?;

        let cells = heap
            .parallel_new(cell_ty, n, |heap, h, i| {
                heap.write_field::<ObjectHandle>(h, CL_AGENT, ObjectHandle::NULL);
                heap.write_field::<ObjectHandle>(h, CL_INCOMING, ObjectHandle::NULL);
                heap.write_field::<u64>(h, CL_REQUESTS, 0);
                for d in 0..4 {
                    heap.write_field::<ObjectHandle>(h, CL_NEIGHBOR0 + d, ObjectHandle::NULL);
                }
                heap.write_field::<u32>(h, CL_IDX, i as u32);
            })?;

        let world = WaTor {
            heap,
            cells,
            cfg,
            tick: 0,
            fish_ty,
            shark_ty,
        };

        // Wire the neighbor handles now that every cell exists.
        {
            let cells = world.cells.as_slice();
            let (w, h) = (cfg.width, cfg.height);
            world
                .heap
                .parallel_do(cell_ty, |heap, me| {
                    let idx = heap.read_field::<u32>(me, CL_IDX) as usize;
                    for d in 0..4 {
                        let n = cells[neighbor_idx(w, h, idx, d)];
                        heap.write_field::<ObjectHandle>(me, CL_NEIGHBOR0 + d, n);
                    }
                    Ok(())
                })
                .expect("wiring allocates nothing");
        }

        // Seed the initial population deterministically by cell index.
        for i in 0..n {
            let u = unit_f64(counter_rng(cfg.seed, STREAM_INIT_SPECIES, i as u64));
            let age = counter_rng(cfg.seed, STREAM_INIT_AGE, i as u64);
            if u < cfg.fish_fraction {
                world.spawn_fish_at(i, (age % cfg.fish_breed as u64) as u32)?;
            } else if u < cfg.fish_fraction + cfg.shark_fraction {
                world.spawn_shark_at(i, (age % cfg.shark_breed as u64) as u32, 0)?;
            }
        }
        Ok(world)
    }

    pub fn heap(&self) -> &SoaHeap {
        &self.heap
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn counts(&self) -> (u64, u64) {
        (
            self.heap.live_count(self.fish_ty),
            self.heap.live_count(self.shark_ty),
        )
    }

    /// Places a fish on an empty cell (quiescent helper; used for seeding
    /// and tests).
    pub fn spawn_fish(&self, x: usize, y: usize, breed: u32) -> Result<(), AllocError> {
        self.spawn_fish_at(y * self.cfg.width + x, breed)
    }

    pub fn spawn_shark(&self, x: usize, y: usize, breed: u32, starve: u32) -> Result<(), AllocError> {
        self.spawn_shark_at(y * self.cfg.width + x, breed, starve)
    }

    fn spawn_fish_at(&self, idx: usize, breed: u32) -> Result<(), AllocError> {
        let cell = self.cells[idx];
        assert!(self.heap.read_field::<ObjectHandle>(cell, CL_AGENT).is_null());
        let f = self.heap.allocate_with(self.fish_ty, |heap, f| {
            heap.write_field::<ObjectHandle>(f, AG_CELL, cell);
            heap.write_field::<u32>(f, AG_BREED, breed);
        })?;
        self.heap.write_field::<ObjectHandle>(cell, CL_AGENT, f);
        Ok(())
    }

    fn spawn_shark_at(&self, idx: usize, breed: u32, starve: u32) -> Result<(), AllocError> {
        let cell = self.cells[idx];
        assert!(self.heap.read_field::<ObjectHandle>(cell, CL_AGENT).is_null());
        let s = self.heap.allocate_with(self.shark_ty, |heap, s| {
            heap.write_field::<ObjectHandle>(s, AG_CELL, cell);
            heap.write_field::<u32>(s, AG_BREED, breed);
            heap.write_field::<u32>(s, SH_STARVE, starve);
        })?;
        self.heap.write_field::<ObjectHandle>(cell, CL_AGENT, s);
        Ok(())
    }

    /// 0 = water, 1 = fish, 2 = shark, row-major.
    pub fn species_grid(&self) -> Vec<u8> {
        self.cells
            .iter()
            .map(|&c| {
                let occ = self.heap.read_field::<ObjectHandle>(c, CL_AGENT);
                if occ.is_null() {
                    0
                } else if occ.type_id() == self.fish_ty {
                    1
                } else {
                    2
                }
            })
            .collect()
    }

    /// Cross-checks the grid against the heap (quiescent only): occupants
    /// point back at their cells, every live agent is on exactly one cell,
    /// and the heap's internal structures agree.
    pub fn verify_world(&self) {
        let mut seen = std::collections::HashSet::new();
        let mut fish = 0u64;
        let mut sharks = 0u64;
        for &c in &self.cells {
            let occ = self.heap.read_field::<ObjectHandle>(c, CL_AGENT);
            if occ.is_null() {
                continue;
            }
            assert!(seen.insert(occ.raw()), "agent on two cells");
            let back = self.heap.read_field::<ObjectHandle>(occ, AG_CELL);
            assert_eq!(back, c, "occupant does not point back at its cell");
            if occ.type_id() == self.fish_ty {
                fish += 1;
            } else {
                assert_eq!(occ.type_id(), self.shark_ty);
                sharks += 1;
            }
        }
        assert_eq!(fish, self.heap.live_count(self.fish_ty), "orphaned fish");
        assert_eq!(sharks, self.heap.live_count(self.shark_ty), "orphaned sharks");
        self.heap.check_consistency();
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) -> Result<(), AllocError> {
        let heap = &self.heap;
        let cfg = self.cfg;
        let fish_ty = self.fish_ty;
        let shark_ty = self.shark_ty;
        let cell_ty = self.cells[0].type_id();
        let seed = cfg.seed;
        let tick = self.tick;

        let clear = |heap: &SoaHeap, me: ObjectHandle| {
            heap.write_field::<u64>(me, CL_REQUESTS, 0);
            heap.write_field::<ObjectHandle>(me, CL_INCOMING, ObjectHandle::NULL);
            Ok(())
        };

        // A cell picks one requester from its mask; bit d was set by the
        // agent standing on the cell's neighbor in direction d.
        let pick = move |heap: &SoaHeap, me: ObjectHandle, stream: u64| {
            let mask = heap.read_field::<u64>(me, CL_REQUESTS);
            if mask == 0 {
                return;
            }
            let idx = heap.read_field::<u32>(me, CL_IDX) as u64;
            let k = rand_below(counter_rng(seed, stream, idx), mask.count_ones() as u64);
            let d = kth_set_bit(mask, k as u32);
            let from = heap.read_field::<ObjectHandle>(me, CL_NEIGHBOR0 + d);
            let winner = heap.read_field::<ObjectHandle>(from, CL_AGENT);
            heap.write_field::<ObjectHandle>(me, CL_INCOMING, winner);
        };

        // The granted destination, if any: the first neighbor (in direction
        // order) that picked this agent.
        let granted_dest = |heap: &SoaHeap, me: ObjectHandle, cell: ObjectHandle| {
            for d in 0..4 {
                let n = heap.read_field::<ObjectHandle>(cell, CL_NEIGHBOR0 + d);
                if heap.read_field::<ObjectHandle>(n, CL_INCOMING) == me {
                    return n;
                }
            }
            ObjectHandle::NULL
        };

        // 1. Reset cells for the fish round.
        heap.parallel_do(cell_ty, |heap, me| clear(heap, me))?;

        // 2. Fish request adjacent free cells.
        heap.parallel_do(fish_ty, |heap, me| {
            let cell = heap.read_field::<ObjectHandle>(me, AG_CELL);
            for d in 0..4 {
                let n = heap.read_field::<ObjectHandle>(cell, CL_NEIGHBOR0 + d);
                if heap.read_field::<ObjectHandle>(n, CL_AGENT).is_null() {
                    heap.atomic_u64_field(n, CL_REQUESTS)
                        .fetch_or(1 << (d ^ 1), SeqCst);
                }
            }
            Ok(())
        })?;

        // 3. Free cells pick an incoming fish.
        heap.parallel_do(cell_ty, move |heap, me| {
            if heap.read_field::<ObjectHandle>(me, CL_AGENT).is_null() {
                pick(heap, me, 2 * tick);
            }
            Ok(())
        })?;

        // 4. Fish move and breed.
        heap.parallel_do(fish_ty, |heap, me| {
            let cell = heap.read_field::<ObjectHandle>(me, AG_CELL);
            let breed = heap.read_field::<u32>(me, AG_BREED) + 1;
            let dest = granted_dest(heap, me, cell);
            if dest.is_null() {
                heap.write_field::<u32>(me, AG_BREED, breed);
                return Ok(());
            }
            heap.write_field::<ObjectHandle>(dest, CL_AGENT, me);
            heap.write_field::<ObjectHandle>(me, AG_CELL, dest);
            if breed >= cfg.fish_breed {
                let kid = heap.allocate_with(fish_ty, |heap, kid| {
                    heap.write_field::<ObjectHandle>(kid, AG_CELL, cell);
                    heap.write_field::<u32>(kid, AG_BREED, 0);
                })?;
                heap.write_field::<ObjectHandle>(cell, CL_AGENT, kid);
                heap.write_field::<u32>(me, AG_BREED, 0);
            } else {
                heap.write_field::<ObjectHandle>(cell, CL_AGENT, ObjectHandle::NULL);
                heap.write_field::<u32>(me, AG_BREED, breed);
            }
            Ok(())
        })?;

        // 5. Reset cells for the shark round.
        heap.parallel_do(cell_ty, |heap, me| clear(heap, me))?;

        // 6. Sharks request adjacent fish cells, else free cells.
        heap.parallel_do(shark_ty, |heap, me| {
            let cell = heap.read_field::<ObjectHandle>(me, AG_CELL);
            let mut neighbors = [ObjectHandle::NULL; 4];
            let mut fish_dirs = 0u8;
            let mut free_dirs = 0u8;
            for (d, slot) in neighbors.iter_mut().enumerate() {
                let n = heap.read_field::<ObjectHandle>(cell, CL_NEIGHBOR0 + d);
                *slot = n;
                let occ = heap.read_field::<ObjectHandle>(n, CL_AGENT);
                if occ.is_null() {
                    free_dirs |= 1 << d;
                } else if occ.type_id() == fish_ty {
                    fish_dirs |= 1 << d;
                }
            }
            let wanted = if fish_dirs != 0 { fish_dirs } else { free_dirs };
            for (d, n) in neighbors.iter().enumerate() {
                if wanted & (1 << d) != 0 {
                    heap.atomic_u64_field(*n, CL_REQUESTS)
                        .fetch_or(1 << (d ^ 1), SeqCst);
                }
            }
            Ok(())
        })?;

        // 7. Cells not holding a shark pick an incoming shark.
        heap.parallel_do(cell_ty, move |heap, me| {
            let occ = heap.read_field::<ObjectHandle>(me, CL_AGENT);
            if occ.is_null() || occ.type_id() != shark_ty {
                pick(heap, me, 2 * tick + 1);
            }
            Ok(())
        })?;

        // 8. Sharks eat, starve, move, and breed.
        heap.parallel_do(shark_ty, |heap, me| {
            let cell = heap.read_field::<ObjectHandle>(me, AG_CELL);
            let dest = granted_dest(heap, me, cell);
            let mut starve = heap.read_field::<u32>(me, SH_STARVE) + 1;
            if !dest.is_null() {
                let prey = heap.read_field::<ObjectHandle>(dest, CL_AGENT);
                if !prey.is_null() {
                    // Fish are not part of this traversal, so deleting one
                    // mid-pass is safe.
                    heap.deallocate(prey);
                    starve = 0;
                }
            }
            if starve >= cfg.shark_starve {
                heap.write_field::<ObjectHandle>(cell, CL_AGENT, ObjectHandle::NULL);
                heap.deallocate(me);
                return Ok(());
            }
            heap.write_field::<u32>(me, SH_STARVE, starve);
            let breed = heap.read_field::<u32>(me, AG_BREED) + 1;
            if dest.is_null() {
                heap.write_field::<u32>(me, AG_BREED, breed);
                return Ok(());
            }
            heap.write_field::<ObjectHandle>(dest, CL_AGENT, me);
            heap.write_field::<ObjectHandle>(me, AG_CELL, dest);
            if breed >= cfg.shark_breed {
                let kid = heap.allocate_with(shark_ty, |heap, kid| {
                    heap.write_field::<ObjectHandle>(kid, AG_CELL, cell);
                    heap.write_field::<u32>(kid, AG_BREED, 0);
                    heap.write_field::<u32>(kid, SH_STARVE, 0);
                })?;
                heap.write_field::<ObjectHandle>(cell, CL_AGENT, kid);
                heap.write_field::<u32>(me, AG_BREED, 0);
            } else {
                heap.write_field::<ObjectHandle>(cell, CL_AGENT, ObjectHandle::NULL);
                heap.write_field::<u32>(me, AG_BREED, breed);
            }
            Ok(())
        })?;

        self.tick += 1;
        Ok(())
    }
}
