//! Conway's Game of Life on a torus, with live cells as dynamically
//! allocated objects.
//!
//! Instead of a dense grid update, the board is a set of *objects*: one
//! static `cell` object per grid position holding a handle to its occupant,
//! plus a dynamic `live` object for every live cell. Each tick additionally
//! materializes a `candidate` object on every empty cell adjacent to a live
//! one — exactly the cells that could be born — so the amount of work per
//! tick is proportional to the active region, not the board size.
//!
//! A tick runs four do-all passes:
//!
//! 1. **offer** (over live objects): for each empty neighbor cell, allocate
//!    a candidate and install it with a compare-and-swap on the cell's
//!    occupant handle; losers of the race free their candidate again, so
//!    every empty frontier cell ends up with exactly one candidate.
//! 2. **count** (over candidates): count live neighbors; a candidate with
//!    exactly three decides to be born.
//! 3. **survive** (over live objects): count live neighbors; two or three
//!    means survival.
//! 4. **commit** (over both, via their common base type): dying live objects
//!    clear their cell and free themselves; winning candidates are replaced
//!    by a fresh live object; every candidate frees itself.
//!
//! The decisions in passes 2 and 3 read only the previous tick's live set
//! (candidates are distinguishable from live objects by their type id), so
//! the update is synchronous and matches the classic dense-grid automaton
//! bit for bit.

use std::sync::atomic::Ordering::SeqCst;

use soa_heap::{AllocError, ConfigError, ObjectHandle, SoaHeap};

/// Field index of the grid position (u32) on the agent base type.
const A_CELL: usize = 0;
/// Field index of the decision byte (u8) on the agent base type's subtypes.
const A_ACTION: usize = 1;
/// Field index of the occupant handle on the cell type.
const C_AGENT: usize = 0;

const ACT_DIE: u8 = 0;
const ACT_LIVE: u8 = 1;

/// Torus neighbor in one of the 8 directions.
fn neighbor_idx(width: usize, height: usize, idx: usize, d: usize) -> usize {
    const OFF: [(isize, isize); 8] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (-1, 0),
        (1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    let (dx, dy) = OFF[d];
    let w = width as isize;
    let h = height as isize;
    let x = (idx % width) as isize;
    let y = (idx / width) as isize;
    let nx = (x + dx).rem_euclid(w);
    let ny = (y + dy).rem_euclid(h);
    (ny * w + nx) as usize
}

pub struct GameOfLife {
    heap: SoaHeap,
    cells: Vec<ObjectHandle>,
    width: usize,
    height: usize,
    agent_ty: u8,
    alive_ty: u8,
    candidate_ty: u8,
}

impl GameOfLife {
    pub fn new(width: usize, height: usize, workers: usize) -> Result<GameOfLife, ConfigError> {
        assert!(width >= 3 && height >= 3, "torus wrap needs a 3x3 board or larger");
        let n = width * height;
        let mut b = SoaHeap::builder();
        let agent_ty = b.register_base("agent", &[4])?;
        let alive_ty = b.register_subtype("live", agent_ty, &[1])?;
        let candidate_ty = b.register_subtype("candidate", agent_ty, &[1])?;
        let cell_ty = b.register_type("cell", &[8])?;
        // Cells are static; live objects and candidates are each bounded by
        // the cell count. Generous headroom keeps churn fragmentation from
        // ever exhausting the arena.
        b.heap_blocks(n.div_ceil(40) + 3 * n.div_ceil(64) + 16);
        b.worker_threads(workers);
        let heap = b.build()?;
        let cells = heap
            .parallel_new(cell_ty, n, |heap, h, _| {
                heap.write_field::<ObjectHandle>(h, C_AGENT, ObjectHandle::NULL);
            })
            .expect("sized for all cells");
        Ok(GameOfLife {
            heap,
            cells,
            width,
            height,
            agent_ty,
            alive_ty,
            candidate_ty,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn heap(&self) -> &SoaHeap {
        &self.heap
    }

    /// Makes the cell at `(x, y)` live (no-op if it already is).
    pub fn set_alive(&self, x: usize, y: usize) -> Result<(), AllocError> {
        let idx = y * self.width + x;
        let cell = self.cells[idx];
        if !self.heap.read_field::<ObjectHandle>(cell, C_AGENT).is_null() {
            return Ok(());
        }
        let a = self.heap.allocate_with(self.alive_ty, |heap, a| {
            heap.write_field::<u32>(a, A_CELL, idx as u32);
            heap.write_field::<u8>(a, A_ACTION, ACT_LIVE);
        })?;
        self.heap.write_field::<ObjectHandle>(cell, C_AGENT, a);
        Ok(())
    }

    pub fn is_alive(&self, x: usize, y: usize) -> bool {
        let occ = self
            .heap
            .read_field::<ObjectHandle>(self.cells[y * self.width + x], C_AGENT);
        !occ.is_null() && occ.type_id() == self.alive_ty
    }

    pub fn alive_count(&self) -> u64 {
        self.heap.live_count(self.alive_ty)
    }

    pub fn alive_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_alive(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Advances the board by one generation.
    pub fn step(&mut self) -> Result<(), AllocError> {
        let heap = &self.heap;
        let cells = self.cells.as_slice();
        let (w, h) = (self.width, self.height);
        let alive = self.alive_ty;
        let candidate = self.candidate_ty;

        let live_neighbors = move |heap: &SoaHeap, idx: usize| -> u32 {
            let mut count = 0;
            for d in 0..8 {
                let occ = heap.read_field::<ObjectHandle>(cells[neighbor_idx(w, h, idx, d)], C_AGENT);
                if !occ.is_null() && occ.type_id() == alive {
                    count += 1;
                }
            }
            count
        };

        // 1. Offer a candidate to every empty neighbor of a live cell.
        heap.parallel_do(alive, |heap, me| {
            let idx = heap.read_field::<u32>(me, A_CELL) as usize;
            for d in 0..8 {
                let n = neighbor_idx(w, h, idx, d);
                if !heap.read_field::<ObjectHandle>(cells[n], C_AGENT).is_null() {
                    continue;
                }
                let c = heap.allocate_with(candidate, |heap, c| {
                    heap.write_field::<u32>(c, A_CELL, n as u32);
                    heap.write_field::<u8>(c, A_ACTION, ACT_DIE);
                })?;
                let won = heap
                    .atomic_u64_field(cells[n], C_AGENT)
                    .compare_exchange(0, c.raw(), SeqCst, SeqCst)
                    .is_ok();
                if !won {
                    heap.deallocate(c); // another live cell already offered one
                }
            }
            Ok(())
        })?;

        // 2. Candidates: born with exactly three live neighbors.
        heap.parallel_do(candidate, |heap, me| {
            let idx = heap.read_field::<u32>(me, A_CELL) as usize;
            let born = live_neighbors(heap, idx) == 3;
            heap.write_field::<u8>(me, A_ACTION, if born { ACT_LIVE } else { ACT_DIE });
            Ok(())
        })?;

        // 3. Live objects: survive with two or three live neighbors.
        heap.parallel_do(alive, |heap, me| {
            let idx = heap.read_field::<u32>(me, A_CELL) as usize;
            let n = live_neighbors(heap, idx);
            let stay = n == 2 || n == 3;
            heap.write_field::<u8>(me, A_ACTION, if stay { ACT_LIVE } else { ACT_DIE });
            Ok(())
        })?;

        // 4. Commit: apply decisions; candidates are transient either way.
        heap.parallel_do(self.agent_ty, |heap, me| {
            let idx = heap.read_field::<u32>(me, A_CELL) as usize;
            let action = heap.read_field::<u8>(me, A_ACTION);
            if me.type_id() == alive {
                if action == ACT_DIE {
                    heap.write_field::<ObjectHandle>(cells[idx], C_AGENT, ObjectHandle::NULL);
                    heap.deallocate(me);
                }
            } else {
                if action == ACT_LIVE {
                    let a = heap.allocate_with(alive, |heap, a| {
                        heap.write_field::<u32>(a, A_CELL, idx as u32);
                        heap.write_field::<u8>(a, A_ACTION, ACT_LIVE);
                    })?;
                    heap.write_field::<ObjectHandle>(cells[idx], C_AGENT, a);
                } else {
                    heap.write_field::<ObjectHandle>(cells[idx], C_AGENT, ObjectHandle::NULL);
                }
                heap.deallocate(me);
            }
            Ok(())
        })
    }
}
