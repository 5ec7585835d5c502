//! Object type declarations and block geometry.
//!
//! Every object type is declared up front as an ordered list of *field element
//! sizes* (one SOA array per field). A subtype's field list starts with its
//! parent's list as a prefix, so a field index valid for the parent is valid —
//! and means the same thing — for every subtype.
//!
//! From the set of registered types the registry derives, at seal time:
//!
//! * the block capacity of each type: `N_T = floor(64 * size(T_s) / size(T))`,
//!   where `T_s` is the smallest *instantiable* type — the smallest type fills
//!   a block with exactly 64 objects and everything larger gets
//!   proportionally fewer slots;
//! * the byte offset of every field array inside a block's data segment
//!   (aligned prefix sums, see [`field_offsets`]);
//! * the common block byte size, which must fit the data segment of *any*
//!   type.
//!
//! Abstract base types (declared but never instantiated) contribute fields to
//! their subtypes but are excluded from the smallest-type computation and get
//! no capacity.

use crate::error::ConfigError;

/// Type id 0 is reserved: it marks free/invalid blocks and the null handle.
pub const FREE_TYPE: u8 = 0;

/// Block capacity for an object of `object_size` bytes when the smallest
/// instantiable type is `smallest_size` bytes: `floor(64 * smallest / size)`.
///
/// Returns 0 when the type is too large to fit even once (the registry turns
/// that into [`ConfigError::TypeTooLarge`]).
pub fn compute_capacity(object_size: usize, smallest_size: usize) -> u32 {
    debug_assert!(smallest_size >= 1 && object_size >= smallest_size);
    (64 * smallest_size / object_size) as u32
}

/// Natural alignment of a field element: the largest power of two dividing
/// its size, capped at 8 (the widest scalar we address).
pub(crate) fn elem_align(size: usize) -> usize {
    debug_assert!(size >= 1);
    (size & size.wrapping_neg()).min(8)
}

/// Byte offsets of each field array within a data segment holding `capacity`
/// objects, plus the total segment size. Field `f` occupies
/// `field_sizes[f] * capacity` bytes starting at the returned offset; each
/// array start is aligned to its element's natural alignment. Because the
/// data segment itself is 64-byte aligned, every element access is aligned.
pub(crate) fn field_offsets(field_sizes: &[usize], capacity: u32) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(field_sizes.len());
    let mut off = 0usize;
    for &size in field_sizes {
        let align = elem_align(size);
        off = off.div_ceil(align) * align;
        offsets.push(off);
        off += size * capacity as usize;
    }
    (offsets, off)
}

/// A registered object type.
#[derive(Debug, Clone)]
pub struct TypeDescriptor {
    type_id: u8,
    name: String,
    parent: Option<u8>,
    children: Vec<u8>,
    is_abstract: bool,
    /// Element byte size per field, inherited fields first.
    field_sizes: Vec<usize>,
    object_size: usize,
    /// `N_T`; 0 until sealed, and permanently 0 for abstract types.
    capacity: u32,
    /// Byte offset of each field array in the block data segment.
    field_offsets: Vec<usize>,
}

impl TypeDescriptor {
    pub fn type_id(&self) -> u8 {
        self.type_id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parent(&self) -> Option<u8> {
        self.parent
    }

    /// Direct subtypes, in registration order.
    pub fn children(&self) -> &[u8] {
        &self.children
    }

    /// True for base types that can never be instantiated.
    pub fn is_abstract(&self) -> bool {
        self.is_abstract
    }

    /// Element byte sizes, inherited fields first.
    pub fn field_sizes(&self) -> &[usize] {
        &self.field_sizes
    }

    /// Sum of all field element sizes.
    pub fn object_size(&self) -> usize {
        self.object_size
    }

    /// Objects per block (`N_T`), or `None` for abstract types.
    pub fn capacity(&self) -> Option<u32> {
        (!self.is_abstract).then_some(self.capacity)
    }

    pub(crate) fn capacity_or_zero(&self) -> u32 {
        self.capacity
    }

    pub(crate) fn field_offset(&self, field: usize) -> usize {
        self.field_offsets[field]
    }
}

/// All registered types plus the derived block geometry. Built single-threaded
/// before heap construction; immutable afterwards.
#[derive(Debug)]
pub struct TypeRegistry {
    types: Vec<TypeDescriptor>,
    /// Bytes of the largest aligned data segment across all types.
    data_bytes: usize,
}

impl TypeRegistry {
    pub(crate) fn new() -> Self {
        TypeRegistry {
            types: Vec::new(),
            data_bytes: 0,
        }
    }

    pub(crate) fn add(
        &mut self,
        name: &str,
        parent: Option<u8>,
        own_field_sizes: &[usize],
        is_abstract: bool,
    ) -> Result<u8, ConfigError> {
        if self.types.len() >= 255 {
            return Err(ConfigError::TooManyTypes);
        }
        if own_field_sizes.contains(&0) {
            return Err(ConfigError::ZeroFieldSize {
                type_name: name.to_string(),
            });
        }
        let mut field_sizes = match parent {
            Some(p) => {
                let parent_desc = self
                    .types
                    .get(p.wrapping_sub(1) as usize)
                    .filter(|_| p != FREE_TYPE)
                    .ok_or_else(|| ConfigError::UnknownParent {
                        type_name: name.to_string(),
                    })?;
                parent_desc.field_sizes.clone()
            }
            None => Vec::new(),
        };
        field_sizes.extend_from_slice(own_field_sizes);
        if field_sizes.is_empty() {
            return Err(ConfigError::NoFields {
                type_name: name.to_string(),
            });
        }
        let type_id = (self.types.len() + 1) as u8;
        if let Some(p) = parent {
            self.types[(p - 1) as usize].children.push(type_id);
        }
        let object_size = field_sizes.iter().sum();
        self.types.push(TypeDescriptor {
            type_id,
            name: name.to_string(),
            parent,
            children: Vec::new(),
            is_abstract,
            field_sizes,
            object_size,
            capacity: 0,
            field_offsets: Vec::new(),
        });
        Ok(type_id)
    }

    /// Computes capacities and field layouts once all types are known.
    pub(crate) fn seal(&mut self) -> Result<(), ConfigError> {
        let smallest = self
            .types
            .iter()
            .filter(|t| !t.is_abstract)
            .map(|t| t.object_size)
            .min()
            .ok_or(ConfigError::NoTypes)?;
        let mut data_bytes = 0;
        for t in &mut self.types {
            if t.is_abstract {
                continue;
            }
            let capacity = compute_capacity(t.object_size, smallest);
            if capacity == 0 {
                return Err(ConfigError::TypeTooLarge {
                    type_name: t.name.clone(),
                    object_size: t.object_size,
                    max_object_size: 64 * smallest,
                });
            }
            let (offsets, total) = field_offsets(&t.field_sizes, capacity);
            t.capacity = capacity;
            t.field_offsets = offsets;
            data_bytes = data_bytes.max(total);
        }
        self.data_bytes = data_bytes;
        Ok(())
    }

    /// Descriptor for `type_id`.
    ///
    /// # Panics
    ///
    /// Panics on the reserved id 0 or an unregistered id.
    pub fn descriptor(&self, type_id: u8) -> &TypeDescriptor {
        assert!(type_id != FREE_TYPE, "type id 0 is reserved");
        &self.types[(type_id - 1) as usize]
    }

    /// All descriptors in registration order.
    pub fn descriptors(&self) -> impl Iterator<Item = &TypeDescriptor> {
        self.types.iter()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// `type_id` plus all transitive subtypes, in registration order; abstract
    /// types are omitted (they never have instances).
    pub fn family(&self, type_id: u8) -> Vec<u8> {
        let mut out = Vec::new();
        let mut stack = vec![type_id];
        while let Some(t) = stack.pop() {
            let d = self.descriptor(t);
            if !d.is_abstract {
                out.push(t);
            }
            // Depth-first, children visited in registration order.
            for &c in d.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Largest aligned data-segment size over all registered types.
    pub(crate) fn data_bytes(&self) -> usize {
        self.data_bytes
    }
}
