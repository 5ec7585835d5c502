//! 2-D gravitational N-body simulation with optional body merging.
//!
//! Bodies are heap objects; each step runs an all-pairs force pass (a
//! parallel do-all whose visitor runs a nested sequential do-all over the
//! same snapshot), then an integration pass. With a positive merge radius,
//! five more passes collapse close pairs into single bodies, which
//! exercises concurrent deletion under the do-all engine:
//!
//! 1. **reset**: clear the per-step merge fields.
//! 2. **propose**: each body looks for the nearest body within the merge
//!    radius that is strictly heavier (ties broken by handle identity, so
//!    the "heavier" relation is a total order) and records it as its
//!    intended absorber.
//! 3. **claim**: a body with an intended absorber tries to register itself
//!    via compare-and-swap on the absorber's incoming slot — but only if
//!    the absorber is not itself merging away. At most one claim per
//!    absorber wins; chains (A into B into C) are impossible.
//! 4. **absorb**: an absorber with a registered loser takes its momentum
//!    and mass (center-of-mass position, summed mass) and marks the loser.
//! 5. **sweep**: marked losers free themselves.
//!
//! The claim guard makes winner and loser sets disjoint, so no body's state
//! is read while being modified, and every marked body is touched by
//! exactly one absorber.

use std::sync::atomic::Ordering::SeqCst;

use soa_heap::{AllocError, ObjectHandle, SoaHeap};

use crate::rng::counter_rng;
use crate::WorldError;

const F_POS_X: usize = 0;
const F_POS_Y: usize = 1;
const F_VEL_X: usize = 2;
const F_VEL_Y: usize = 3;
const F_FORCE_X: usize = 4;
const F_FORCE_Y: usize = 5;
const F_MASS: usize = 6;
const F_MERGE_TARGET: usize = 7;
const F_MERGE_INCOMING: usize = 8;
const F_WAS_MERGED: usize = 9;

#[derive(Clone, Copy, Debug)]
pub struct NBodyConfig {
    pub bodies: usize,
    pub dt: f32,
    pub gravity: f32,
    pub softening: f32,
    /// Merge bodies closer than this; `0.0` disables merging.
    pub merge_radius: f32,
    /// Reflecting walls at `±bounds`; `None` for free space.
    pub bounds: Option<f32>,
    pub seed: u64,
    pub workers: usize,
    /// Arena size override; `None` sizes the arena from the body count.
    pub heap_bytes: Option<usize>,
    /// Traversal lane-group width override; `None` keeps the default.
    pub lane_width: Option<u32>,
    /// Allocation fast-path retry override; `None` keeps the default.
    pub alloc_retries: Option<u32>,
}

impl Default for NBodyConfig {
    fn default() -> NBodyConfig {
        NBodyConfig {
            bodies: 1024,
            dt: 0.005,
            gravity: 6.674e-4,
            softening: 0.025,
            merge_radius: 0.0,
            bounds: Some(1.0),
            seed: 42,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            heap_bytes: None,
            lane_width: None,
            alloc_retries: None,
        }
    }
}

pub struct NBody {
    heap: SoaHeap,
    body_ty: u8,
    cfg: NBodyConfig,
    steps: u64,
}

/// Uniform draw in `[lo, hi)` from one counter-RNG word.
fn uniform(word: u64, lo: f32, hi: f32) -> f32 {
    let u = (word >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u as f32
}

impl NBody {
    pub fn new(cfg: NBodyConfig) -> Result<NBody, WorldError> {
        assert!(cfg.bodies > 0, "need at least one body");
        let mut b = SoaHeap::builder();
        let body_ty = b.register_type(
            "body",
            &[4, 4, 4, 4, 4, 4, 4, 8, 8, 1], // pos, vel, force, mass, merge bookkeeping
        )?;
        if let Some(bytes) = cfg.heap_bytes {
            b.heap_bytes(bytes);
        } else {
            b.heap_blocks(cfg.bodies.div_ceil(64) + 4);
        }
        if let Some(w) = cfg.lane_width {
            b.lane_width(w);
        }
        if let Some(r) = cfg.alloc_retries {
            b.alloc_retries(r);
        }
        b.worker_threads(cfg.workers);
        let heap = b.build()?;

        let span = cfg.bounds.unwrap_or(1.0) * 0.9;
        let seed = cfg.seed;
        heap.parallel_new(body_ty, cfg.bodies, |heap, h, i| {
            let i = i as u64;
            heap.write_field::<f32>(h, F_POS_X, uniform(counter_rng(seed, 0, i), -span, span));
            heap.write_field::<f32>(h, F_POS_Y, uniform(counter_rng(seed, 1, i), -span, span));
            heap.write_field::<f32>(h, F_VEL_X, uniform(counter_rng(seed, 2, i), -0.05, 0.05));
            heap.write_field::<f32>(h, F_VEL_Y, uniform(counter_rng(seed, 3, i), -0.05, 0.05));
            heap.write_field::<f32>(h, F_FORCE_X, 0.0);
            heap.write_field::<f32>(h, F_FORCE_Y, 0.0);
            heap.write_field::<f32>(h, F_MASS, uniform(counter_rng(seed, 4, i), 0.5, 1.5));
            heap.write_field::<ObjectHandle>(h, F_MERGE_TARGET, ObjectHandle::NULL);
            heap.write_field::<ObjectHandle>(h, F_MERGE_INCOMING, ObjectHandle::NULL);
            heap.write_field::<u8>(h, F_WAS_MERGED, 0);
        })?;

        Ok(NBody {
            heap,
            body_ty,
            cfg,
            steps: 0,
        })
    }

    pub fn heap(&self) -> &SoaHeap {
        &self.heap
    }

    pub fn body_count(&self) -> u64 {
        self.heap.live_count(self.body_ty)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances the simulation by one time step.
    pub fn step(&mut self) -> Result<(), AllocError> {
        let heap = &self.heap;
        let t = self.body_ty;
        let cfg = self.cfg;

        // All-pairs gravity. The nested traversal sees this pass's snapshot,
        // so every body accumulates force from the same consistent body set.
        heap.parallel_do(t, |heap, me| {
            let xi = heap.read_field::<f32>(me, F_POS_X);
            let yi = heap.read_field::<f32>(me, F_POS_Y);
            let mi = heap.read_field::<f32>(me, F_MASS);
            let eps2 = cfg.softening * cfg.softening;
            let mut fx = 0.0f32;
            let mut fy = 0.0f32;
            heap.device_do(t, |heap, other| {
                if other == me {
                    return;
                }
                let dx = heap.read_field::<f32>(other, F_POS_X) - xi;
                let dy = heap.read_field::<f32>(other, F_POS_Y) - yi;
                let mo = heap.read_field::<f32>(other, F_MASS);
                let d2 = dx * dx + dy * dy + eps2;
                // (mi * mo) rather than mi * g * mo: f32 multiplication is
                // commutative bit for bit, so the pair (i, j) and (j, i)
                // compute forces that cancel exactly and momentum drift
                // stays at accumulation-rounding level.
                let f = cfg.gravity * (mi * mo) / (d2 * d2.sqrt());
                fx += f * dx;
                fy += f * dy;
            });
            heap.write_field::<f32>(me, F_FORCE_X, fx);
            heap.write_field::<f32>(me, F_FORCE_Y, fy);
            Ok(())
        })?;

        // Integrate, reflecting at the walls if bounded.
        heap.parallel_do(t, |heap, me| {
            let m = heap.read_field::<f32>(me, F_MASS);
            let mut vx = heap.read_field::<f32>(me, F_VEL_X)
                + heap.read_field::<f32>(me, F_FORCE_X) / m * cfg.dt;
            let mut vy = heap.read_field::<f32>(me, F_VEL_Y)
                + heap.read_field::<f32>(me, F_FORCE_Y) / m * cfg.dt;
            let mut x = heap.read_field::<f32>(me, F_POS_X) + vx * cfg.dt;
            let mut y = heap.read_field::<f32>(me, F_POS_Y) + vy * cfg.dt;
            if let Some(wall) = cfg.bounds {
                if x > wall {
                    x = wall;
                    vx = -vx.abs();
                } else if x < -wall {
                    x = -wall;
                    vx = vx.abs();
                }
                if y > wall {
                    y = wall;
                    vy = -vy.abs();
                } else if y < -wall {
                    y = -wall;
                    vy = vy.abs();
                }
            }
            heap.write_field::<f32>(me, F_VEL_X, vx);
            heap.write_field::<f32>(me, F_VEL_Y, vy);
            heap.write_field::<f32>(me, F_POS_X, x);
            heap.write_field::<f32>(me, F_POS_Y, y);
            Ok(())
        })?;

        if cfg.merge_radius > 0.0 {
            self.run_merge_passes()?;
        }
        self.steps += 1;
        Ok(())
    }

    fn run_merge_passes(&self) -> Result<(), AllocError> {
        let heap = &self.heap;
        let t = self.body_ty;
        let r2 = self.cfg.merge_radius * self.cfg.merge_radius;

        // 1. Reset per-step merge bookkeeping.
        heap.parallel_do(t, |heap, me| {
            heap.write_field::<ObjectHandle>(me, F_MERGE_TARGET, ObjectHandle::NULL);
            heap.write_field::<ObjectHandle>(me, F_MERGE_INCOMING, ObjectHandle::NULL);
            heap.write_field::<u8>(me, F_WAS_MERGED, 0);
            Ok(())
        })?;

        // 2. Propose: nearest strictly-heavier body within the radius.
        heap.parallel_do(t, |heap, me| {
            let xi = heap.read_field::<f32>(me, F_POS_X);
            let yi = heap.read_field::<f32>(me, F_POS_Y);
            let mi = heap.read_field::<f32>(me, F_MASS);
            let mut best: Option<(f32, u64)> = None;
            heap.device_do(t, |heap, other| {
                if other == me {
                    return;
                }
                let dx = heap.read_field::<f32>(other, F_POS_X) - xi;
                let dy = heap.read_field::<f32>(other, F_POS_Y) - yi;
                let d2 = dx * dx + dy * dy;
                if d2 > r2 {
                    return;
                }
                let mo = heap.read_field::<f32>(other, F_MASS);
                // Total order on (mass, handle) so one of any close pair
                // always defers to the other.
                if (mo, other.raw()) <= (mi, me.raw()) {
                    return;
                }
                let better = match best {
                    None => true,
                    Some((bd2, braw)) => d2 < bd2 || (d2 == bd2 && other.raw() < braw),
                };
                if better {
                    best = Some((d2, other.raw()));
                }
            });
            if let Some((_, raw)) = best {
                heap.write_field::<ObjectHandle>(me, F_MERGE_TARGET, ObjectHandle::from_raw(raw));
            }
            Ok(())
        })?;

        // 3. Claim: register with the absorber unless it is merging away
        //    itself; first claimant wins.
        heap.parallel_do(t, |heap, me| {
            let target = heap.read_field::<ObjectHandle>(me, F_MERGE_TARGET);
            if target.is_null() {
                return Ok(());
            }
            if !heap
                .read_field::<ObjectHandle>(target, F_MERGE_TARGET)
                .is_null()
            {
                return Ok(()); // absorber is itself a loser this step
            }
            let _ = heap
                .atomic_u64_field(target, F_MERGE_INCOMING)
                .compare_exchange(0, me.raw(), SeqCst, SeqCst);
            Ok(())
        })?;

        // 4. Absorb: take the loser's momentum and mass.
        heap.parallel_do(t, |heap, me| {
            let loser = heap.read_field::<ObjectHandle>(me, F_MERGE_INCOMING);
            if loser.is_null() {
                return Ok(());
            }
            // A body that claimed someone never passes the claim guard as a
            // target, so `me` is not merging away and `loser`'s fields are
            // stable here.
            let xi = heap.read_field::<f32>(me, F_POS_X);
            let yi = heap.read_field::<f32>(me, F_POS_Y);
            let vxi = heap.read_field::<f32>(me, F_VEL_X);
            let vyi = heap.read_field::<f32>(me, F_VEL_Y);
            let mi = heap.read_field::<f32>(me, F_MASS);
            let xl = heap.read_field::<f32>(loser, F_POS_X);
            let yl = heap.read_field::<f32>(loser, F_POS_Y);
            let vxl = heap.read_field::<f32>(loser, F_VEL_X);
            let vyl = heap.read_field::<f32>(loser, F_VEL_Y);
            let ml = heap.read_field::<f32>(loser, F_MASS);
            let m = mi + ml;
            heap.write_field::<f32>(me, F_POS_X, (xi * mi + xl * ml) / m);
            heap.write_field::<f32>(me, F_POS_Y, (yi * mi + yl * ml) / m);
            heap.write_field::<f32>(me, F_VEL_X, (vxi * mi + vxl * ml) / m);
            heap.write_field::<f32>(me, F_VEL_Y, (vyi * mi + vyl * ml) / m);
            heap.write_field::<f32>(me, F_MASS, m);
            heap.write_field::<u8>(loser, F_WAS_MERGED, 1);
            Ok(())
        })?;

        // 5. Sweep: absorbed bodies delete themselves.
        heap.parallel_do(t, |heap, me| {
            if heap.read_field::<u8>(me, F_WAS_MERGED) == 1 {
                heap.deallocate(me);
            }
            Ok(())
        })
    }

    /// Calls `f(x, y, vx, vy, mass)` for every live body, sequentially.
    pub fn for_each_body(&self, mut f: impl FnMut(f32, f32, f32, f32, f32)) {
        self.heap.refresh_iteration_bitmaps(self.body_ty);
        self.heap.device_do(self.body_ty, |heap, h| {
            f(
                heap.read_field::<f32>(h, F_POS_X),
                heap.read_field::<f32>(h, F_POS_Y),
                heap.read_field::<f32>(h, F_VEL_X),
                heap.read_field::<f32>(h, F_VEL_Y),
                heap.read_field::<f32>(h, F_MASS),
            );
        });
    }

    /// Total momentum, accumulated in f64 for a stable reading.
    pub fn total_momentum(&self) -> (f64, f64) {
        let mut px = 0.0;
        let mut py = 0.0;
        self.for_each_body(|_, _, vx, vy, m| {
            px += (m as f64) * (vx as f64);
            py += (m as f64) * (vy as f64);
        });
        (px, py)
    }

    pub fn total_mass(&self) -> f64 {
        let mut sum = 0.0;
        self.for_each_body(|_, _, _, _, m| sum += m as f64);
        sum
    }
}
