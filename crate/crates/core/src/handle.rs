//! Encoded object references.
//!
//! An [`ObjectHandle`] packs everything needed to locate an object's fields
//! into one 64-bit word, so no lookup table sits between a handle and a field
//! address:
//!
//! ```text
//! bits 56..=63   type id         (8 bits, id 0 reserved -> a real handle is never 0)
//! bits 50..=55   block capacity  (6 bits, stored mod 64: a stored 0 decodes as 64)
//! bits  6..=49   block index     (44 bits)
//! bits  0..= 5   slot index      (6 bits)
//! ```
//!
//! Carrying the capacity in the handle lets field address computation scale
//! the per-object field offsets without consulting the type descriptor.
//! `ObjectHandle(0)` is the null sentinel ([`ObjectHandle::NULL`]).

/// Mask of the slot bits.
const SLOT_MASK: u64 = 0x3F;
/// First bit of the block index.
const BLOCK_SHIFT: u32 = 6;
/// Width of the block index field.
const BLOCK_BITS: u32 = 44;
/// First bit of the capacity field.
const CAPACITY_SHIFT: u32 = 50;
/// First bit of the type id field.
const TYPE_SHIFT: u32 = 56;

/// A 64-bit encoded object reference. See the [module docs](self) for the
/// bit layout.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectHandle(u64);

impl ObjectHandle {
    /// The null handle: no real handle encodes to 0 because type id 0 is
    /// reserved.
    pub const NULL: ObjectHandle = ObjectHandle(0);

    /// Packs the components into a handle.
    ///
    /// # Panics
    ///
    /// Panics if `type_id` is 0, `capacity` is not in `1..=64`, `slot` is not
    /// below `capacity`, or `block` does not fit in 44 bits.
    pub fn encode(type_id: u8, capacity: u32, block: usize, slot: u32) -> ObjectHandle {
        assert!(type_id != 0, "type id 0 is reserved for the null handle");
        assert!((1..=64).contains(&capacity), "capacity {capacity} out of range");
        assert!(slot < capacity, "slot {slot} >= capacity {capacity}");
        assert!((block as u64) < (1 << BLOCK_BITS), "block index {block} too large");
        ObjectHandle(
            ((type_id as u64) << TYPE_SHIFT)
                | (((capacity as u64) & 63) << CAPACITY_SHIFT)
                | ((block as u64) << BLOCK_SHIFT)
                | (slot as u64),
        )
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn type_id(self) -> u8 {
        (self.0 >> TYPE_SHIFT) as u8
    }

    /// Block capacity; a stored 0 decodes as 64.
    pub fn capacity(self) -> u32 {
        match ((self.0 >> CAPACITY_SHIFT) & 63) as u32 {
            0 => 64,
            c => c,
        }
    }

    pub fn block(self) -> usize {
        ((self.0 >> BLOCK_SHIFT) & ((1 << BLOCK_BITS) - 1)) as usize
    }

    pub fn slot(self) -> u32 {
        (self.0 & SLOT_MASK) as u32
    }

    /// The raw 64-bit encoding (stable; suitable for storing in object
    /// fields).
    pub fn raw(self) -> u64 {
        self.0
    }

    /// Reinterprets a raw word as a handle. The inverse of
    /// [`raw`](Self::raw); performs no validation.
    pub fn from_raw(raw: u64) -> ObjectHandle {
        ObjectHandle(raw)
    }
}

impl std::fmt::Debug for ObjectHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_null() {
            write!(f, "ObjectHandle(NULL)")
        } else {
            write!(
                f,
                "ObjectHandle(type={}, block={}, slot={}, cap={})",
                self.type_id(),
                self.block(),
                self.slot(),
                self.capacity()
            )
        }
    }
}
