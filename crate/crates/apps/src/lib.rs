//! Demo applications and workloads built on the `soa_heap` object heap.
//!
//! Each module is a self-contained workload exercising a different part of
//! the allocator and its parallel traversal engine:
//!
//! - [`scalability`]: raw allocate/free throughput across threads, the
//!   classic multi-threaded malloc scalability setup.
//! - [`game_of_life`]: Conway's Game of Life with live cells as objects —
//!   synchronous updates via do-all passes, bit-compatible with the dense
//!   automaton.
//! - [`nbody`]: all-pairs gravity with optional body merging — nested
//!   traversals and a concurrent-deletion protocol.
//! - [`wa_tor`]: the Wa-Tor predator/prey world — heavy object churn,
//!   cross-type deletion mid-pass, and scheduling-independent trajectories.
//! - [`rng`]: the counter-based RNG the workloads share; decisions keyed on
//!   stable indices rather than object placement keep runs reproducible.

use std::error::Error;
use std::fmt;

use soa_heap::{AllocError, BulkNewError, ConfigError};

pub mod game_of_life;
pub mod nbody;
pub mod rng;
pub mod scalability;
pub mod wa_tor;

/// Setup failure of a demo world.
///
/// Worlds that accept a caller-sized arena can fail in two ways: the heap
/// layout itself is rejected, or the arena builds fine but cannot hold the
/// initial population.
#[derive(Debug)]
pub enum WorldError {
    /// The heap layout was rejected.
    Config(ConfigError),
    /// The arena is too small for the initial world population.
    OutOfMemory,
}

impl fmt::Display for WorldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorldError::Config(e) => e.fmt(f),
            WorldError::OutOfMemory => {
                write!(f, "arena too small for the initial world population")
            }
        }
    }
}

impl Error for WorldError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            WorldError::Config(e) => Some(e),
            WorldError::OutOfMemory => None,
        }
    }
}

impl From<ConfigError> for WorldError {
    fn from(e: ConfigError) -> WorldError {
        WorldError::Config(e)
    }
}

impl From<AllocError> for WorldError {
    fn from(_: AllocError) -> WorldError {
        WorldError::OutOfMemory
    }
}

impl From<BulkNewError> for WorldError {
    fn from(_: BulkNewError) -> WorldError {
        WorldError::OutOfMemory
    }
}
