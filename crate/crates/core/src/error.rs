//! Error types for heap construction and allocation.

use std::error::Error;
use std::fmt;

use crate::handle::ObjectHandle;

/// Runtime allocation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocError {
    /// No free block could be claimed and no active block had a free slot.
    ///
    /// This is a stable outcome, not a transient one: the allocator has already
    /// retried its fast path and re-scanned the free bitmap before giving up.
    /// Heaps configured with [`OnOom::Spin`](crate::OnOom::Spin) never return
    /// this variant and instead keep retrying until memory becomes available.
    OutOfMemory,
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocError::OutOfMemory => write!(f, "out of memory: no free block or active slot"),
        }
    }
}

impl Error for AllocError {}

/// Errors raised while declaring types or constructing a heap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    /// More than 255 types were registered (type id 0 is reserved for "free").
    TooManyTypes,
    /// A field element size of zero was declared.
    ZeroFieldSize { type_name: String },
    /// A type declared no fields and inherited none.
    NoFields { type_name: String },
    /// The named parent type id does not exist or is not registered yet.
    UnknownParent { type_name: String },
    /// An object of this type would not fit in one block: its size exceeds
    /// 64x the size of the smallest instantiable type.
    TypeTooLarge {
        type_name: String,
        object_size: usize,
        max_object_size: usize,
    },
    /// No instantiable type was registered before building the heap.
    NoTypes,
    /// The requested heap byte size is smaller than a single block.
    HeapTooSmall { heap_bytes: usize, block_bytes: usize },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::TooManyTypes => write!(f, "at most 255 types can be registered"),
            ConfigError::ZeroFieldSize { type_name } => {
                write!(f, "type `{type_name}` declares a zero-sized field")
            }
            ConfigError::NoFields { type_name } => {
                write!(f, "type `{type_name}` has no fields")
            }
            ConfigError::UnknownParent { type_name } => {
                write!(f, "type `{type_name}` names an unregistered parent")
            }
            ConfigError::TypeTooLarge {
                type_name,
                object_size,
                max_object_size,
            } => write!(
                f,
                "type `{type_name}` is {object_size} bytes; at most {max_object_size} bytes \
                 (64x the smallest instantiable type) fit in one block"
            ),
            ConfigError::NoTypes => write!(f, "no instantiable types were registered"),
            ConfigError::HeapTooSmall {
                heap_bytes,
                block_bytes,
            } => write!(
                f,
                "heap of {heap_bytes} bytes is smaller than one block ({block_bytes} bytes)"
            ),
        }
    }
}

impl Error for ConfigError {}

/// Partial failure of a bulk construction: the heap ran out of memory before
/// all `requested` objects could be created.
///
/// The objects in `created` remain live (and initialized); the caller
/// decides whether to keep or roll them back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BulkNewError {
    pub created: Vec<ObjectHandle>,
    pub requested: usize,
}

impl fmt::Display for BulkNewError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "out of memory after creating {} of {} objects",
            self.created.len(),
            self.requested
        )
    }
}

impl Error for BulkNewError {}
