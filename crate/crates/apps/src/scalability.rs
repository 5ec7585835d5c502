//! Multi-threaded allocator stress test: every thread allocates a share of
//! fixed-size objects as fast as it can, then everything is freed again.
//!
//! The heap is sized to hold *exactly* the requested number of objects, so
//! the run also measures how close the allocator gets to full utilization
//! under contention (transient failures are possible when threads race for
//! the last blocks).

use std::sync::Barrier;
use std::time::{Duration, Instant};

use soa_heap::{ConfigError, HeapCounters, SoaHeap};

/// One 64-byte object: eight 8-byte fields.
const FIELD_SIZES: [usize; 8] = [8; 8];

#[derive(Debug, Clone, Copy)]
pub struct ScalabilityConfig {
    /// Total objects to allocate across all threads.
    pub allocations: usize,
    /// Worker thread count; must divide into `allocations` reasonably.
    pub threads: usize,
}

impl Default for ScalabilityConfig {
    fn default() -> Self {
        ScalabilityConfig {
            allocations: 1 << 20,
            threads: 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScalabilityReport {
    pub requested: usize,
    pub allocated: usize,
    /// `allocated / requested`.
    pub utilization: f64,
    pub alloc_time: Duration,
    pub free_time: Duration,
    /// Heap event counters for the whole run.
    pub counters: HeapCounters,
}

/// Runs the workload: `threads` threads allocate `allocations / threads`
/// 64-byte objects each (writing one field of every object so the memory is
/// really touched), then free everything. The heap holds exactly
/// `allocations` slots.
pub fn run(cfg: ScalabilityConfig) -> Result<ScalabilityReport, ConfigError> {
    assert!(cfg.threads >= 1);
    assert!(cfg.allocations >= cfg.threads);
    let mut b = SoaHeap::builder();
    let node = b.register_type("node", &FIELD_SIZES)?;
    b.heap_blocks(cfg.allocations.div_ceil(64));
    let heap = b.build()?;

    let per_thread = cfg.allocations / cfg.threads;
    let requested = per_thread * cfg.threads;
    let barrier = Barrier::new(cfg.threads);

    let start = Instant::now();
    let mut batches: Vec<Vec<soa_heap::ObjectHandle>> = Vec::new();
    std::thread::scope(|s| {
        let joins: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let heap = &heap;
                let barrier = &barrier;
                s.spawn(move || {
                    let mut mine = Vec::with_capacity(per_thread);
                    barrier.wait();
                    for i in 0..per_thread {
                        // A failed allocation is simply lost utilization.
                        if let Ok(h) = heap.allocate(node) {
                            heap.write_field::<u64>(h, 0, (t * per_thread + i) as u64);
                            mine.push(h);
                        }
                    }
                    mine
                })
            })
            .collect();
        batches.extend(joins.into_iter().map(|j| j.join().unwrap()));
    });
    let alloc_time = start.elapsed();

    let allocated: usize = batches.iter().map(|v| v.len()).sum();

    let start = Instant::now();
    std::thread::scope(|s| {
        for mine in batches {
            let heap = &heap;
            s.spawn(move || {
                for h in mine {
                    heap.deallocate(h);
                }
            });
        }
    });
    let free_time = start.elapsed();

    // Everything freed: the heap must be back to its pristine state.
    assert_eq!(heap.allocated_block_count(), 0, "drain left blocks behind");
    assert_eq!(heap.live_count(node), 0);
    heap.check_consistency();

    Ok(ScalabilityReport {
        requested,
        allocated,
        utilization: allocated as f64 / requested as f64,
        alloc_time,
        free_time,
        counters: heap.counters(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_reaches_full_utilization_single_thread() {
        let report = run(ScalabilityConfig {
            allocations: 1 << 12,
            threads: 1,
        })
        .unwrap();
        assert_eq!(report.allocated, 1 << 12, "no contention, no losses");
        assert_eq!(report.utilization, 1.0);
    }

    #[test]
    fn small_run_multi_thread_high_utilization() {
        let report = run(ScalabilityConfig {
            allocations: 1 << 14,
            threads: 4,
        })
        .unwrap();
        assert!(
            report.utilization >= 0.95,
            "utilization {} too low",
            report.utilization
        );
    }
}
