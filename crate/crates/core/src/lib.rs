//! A lock-free dynamic object allocator with structure-of-arrays layout and
//! a parallel do-all execution engine.
//!
//! The heap targets workloads that process large, changing populations of
//! small objects with data-parallel passes ("for every object of type T, run
//! this"). It provides:
//!
//! * **SOA storage with dynamic allocation.** Objects live in fixed 64-slot
//!   blocks; inside a block each field occupies a contiguous array, so passes
//!   that touch one field stream through memory. Blocks are claimed, typed,
//!   filled, emptied, and recycled at runtime — object creation and deletion
//!   are ordinary, concurrent operations.
//! * **Lock-free bookkeeping.** All shared state lives in hierarchical
//!   bitmaps ([`HierarchicalBitmap`]) and per-block bitmap words updated
//!   with single-word atomics. Threads never block; stale decisions are
//!   detected and rolled back after the fact.
//! * **Safe memory reclamation by invalidation.** The thread that frees the
//!   last object of a block atomically flips the block's bitmap to the
//!   all-set state; whoever wins that race owns the block's retirement, and
//!   every concurrent allocation attempt simply fails and retries elsewhere.
//! * **A do-all engine.** [`SoaHeap::parallel_do`] applies a visitor to
//!   every object of a type (including subtypes) with snapshot semantics;
//!   [`SoaHeap::parallel_new`] bulk-creates objects; [`SoaHeap::device_do`]
//!   gives visitors a sequential all-pairs view of the same snapshot.
//!
//! # Example
//!
//! ```
//! use soa_heap::SoaHeap;
//!
//! let mut b = SoaHeap::builder();
//! let particle = b.register_type("particle", &[4, 4]).unwrap(); // x, v: f32
//! b.heap_blocks(64).worker_threads(2);
//! let heap = b.build().unwrap();
//!
//! heap.parallel_new(particle, 1000, |heap, h, i| {
//!     heap.write_field::<f32>(h, 0, i as f32);
//!     heap.write_field::<f32>(h, 1, 0.5);
//! })
//! .unwrap();
//!
//! heap.parallel_do(particle, |heap, h| {
//!     let x = heap.read_field::<f32>(h, 0);
//!     let v = heap.read_field::<f32>(h, 1);
//!     heap.write_field::<f32>(h, 0, x + v);
//!     Ok(())
//! })
//! .unwrap();
//! ```

mod bitmap;
mod block;
mod engine;
mod error;
mod handle;
mod heap;
mod types;

pub use bitmap::{BitmapInit, HierarchicalBitmap};
pub use engine::EnumerationPlan;
pub use error::{AllocError, BulkNewError, ConfigError};
pub use handle::ObjectHandle;
pub use heap::{FieldValue, HeapCounters, OnOom, SoaHeap, SoaHeapBuilder};
pub use types::{TypeDescriptor, TypeRegistry};
