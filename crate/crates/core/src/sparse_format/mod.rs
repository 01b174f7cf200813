//! The 1:M compressed weight format.
//!
//! Each filter row of `fx * fy * c` int8 weights is cut into M-sized blocks
//! (the row is zero-padded up to a multiple of M). A block holds at most one
//! non-zero; the format keeps that value plus its 2- or 4-bit position inside
//! the block. An all-zero block is stored as value 0 at offset 0 so every
//! channel has the same number of entries.
//!
//! Three offset layouts exist, all sharing the same channel-major `values`:
//!
//! * [`Layout::Plain`]: one offset field per value, in value order.
//! * [`Layout::ReplicatedConv`]: every field stored twice in a row, which is
//!   what the decimating load consumes when a conv kernel walks two im2col
//!   patches per block.
//! * [`Layout::InterleavedFc`]: fields of channel pairs `(2i, 2i+1)` are
//!   alternated block by block, for the two-channel FC kernel.

mod bitpack;
mod file;
mod footprint;

pub use bitpack::{extract_offset, pack_fields, packed_len, unpack_fields};
pub use file::{read_weights, write_weights, FILE_MAGIC, FILE_VERSION};
pub use footprint::{coo_break_even_sparsity, footprint_coo, footprint_csr, footprint_nm, FootprintReport};

use crate::geometry::WeightShape;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("unsupported sparsity pattern {0}; expected 1:4, 1:8 or 1:16")]
    BadPattern(String),
    #[error("offset fields must be 2 or 4 bits wide, got {0}")]
    BadFieldWidth(u32),
    #[error("field {index} value {value} does not fit in {bits} bits")]
    FieldOverflow { index: usize, value: u8, bits: u32 },
    #[error("field index {index} out of range ({len} fields available)")]
    FieldOutOfRange { index: usize, len: usize },
    #[error("channel {channel} block {block} has {count} non-zeros, pattern allows 1")]
    BlockOverflow { channel: usize, block: usize, count: usize },
    #[error("dense tensor holds {got} elements, shape needs {expected}")]
    DenseLength { got: usize, expected: usize },
    #[error("sparse tensor has {got} values, shape needs {expected}")]
    ValuesLength { got: usize, expected: usize },
    #[error("sparse tensor has {got} offset bytes, layout needs {expected}")]
    OffsetsLength { got: usize, expected: usize },
    #[error("offset {offset} at field {field} is not below the block size {m}")]
    OffsetRange { field: usize, offset: u8, m: usize },
    #[error("replicated offset pair {pair} is not identical")]
    ReplicaMismatch { pair: usize },
    #[error("padding bits of the offset array are not zero")]
    DirtyPadding,
    #[error("non-zero value at channel {channel} block {block} lands in the padded tail")]
    ValueInPadding { channel: usize, block: usize },
    #[error("operation needs {expected:?} layout, tensor is {got:?}")]
    WrongLayout { expected: Layout, got: Layout },
    #[error("interleaved FC layout needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("weight file: {0}")]
    File(String),
}

// ---------------------------------------------------------------------------
// Pattern and layout
// ---------------------------------------------------------------------------

/// A 1:M pattern: at most one non-zero per block of `m` consecutive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SparsityPattern {
    m: u8,
}

impl SparsityPattern {
    pub const ONE_OF_4: Self = Self { m: 4 };
    pub const ONE_OF_8: Self = Self { m: 8 };
    pub const ONE_OF_16: Self = Self { m: 16 };
    pub const ALL: [Self; 3] = [Self::ONE_OF_4, Self::ONE_OF_8, Self::ONE_OF_16];

    pub fn new(m: usize) -> Result<Self, FormatError> {
        match m {
            4 | 8 | 16 => Ok(Self { m: m as u8 }),
            _ => Err(FormatError::BadPattern(format!("1:{m}"))),
        }
    }

    pub fn n(&self) -> usize {
        1
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    /// Bits per stored offset. 1:16 uses 4 bits: offsets are block-relative.
    pub fn offset_bits(&self) -> u32 {
        if self.m == 4 {
            2
        } else {
            4
        }
    }

    /// Blocks per filter row of `reduction_len` weights (the row is zero-padded).
    pub fn blocks(&self, reduction_len: usize) -> usize {
        reduction_len.div_ceil(self.m())
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1:{}", self.m)
    }
}

impl FromStr for SparsityPattern {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FormatError::BadPattern(s.to_string());
        let (n, m) = s.trim().split_once(':').ok_or_else(bad)?;
        if n.trim() != "1" {
            return Err(bad());
        }
        Self::new(m.trim().parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for SparsityPattern {
    type Error = FormatError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SparsityPattern> for String {
    fn from(p: SparsityPattern) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Plain,
    ReplicatedConv,
    InterleavedFc,
}

impl Layout {
    pub fn code(self) -> u8 {
        match self {
            Layout::Plain => 0,
            Layout::ReplicatedConv => 1,
            Layout::InterleavedFc => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Layout::Plain),
            1 => Some(Layout::ReplicatedConv),
            2 => Some(Layout::InterleavedFc),
            _ => None,
        }
    }

    /// Stored offset fields per non-zero value.
    pub fn fields_per_value(self) -> usize {
        match self {
            Layout::ReplicatedConv => 2,
            _ => 1,
        }
    }
}

impl FromStr for Layout {
    type Err = FormatError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Layout::Plain),
            "replicated" | "replicated_conv" => Ok(Layout::ReplicatedConv),
            "interleaved" | "interleaved_fc" => Ok(Layout::InterleavedFc),
            _ => Err(FormatError::File(format!("unknown layout `{s}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

/// Dense int8 weights, `k` rows of `fx * fy * c` (filter-row-major, channel innermost).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseWeights {
    shape: WeightShape,
    data: Vec<i8>,
}

impl DenseWeights {
    pub fn new(shape: WeightShape, data: Vec<i8>) -> Result<Self, FormatError> {
        if data.len() != shape.len() {
            return Err(FormatError::DenseLength { got: data.len(), expected: shape.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> WeightShape {
        self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[i8] {
        let r = self.shape.reduction_len();
        &self.data[k * r..(k + 1) * r]
    }

    pub fn into_data(self) -> Vec<i8> {
        self.data
    }
}

/// Compressed 1:M weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmSparseWeights {
    pattern: SparsityPattern,
    shape: WeightShape,
    values: Vec<i8>,
    offsets: Vec<u8>,
    layout: Layout,
}

impl NmSparseWeights {
    /// Assembles a tensor from raw arrays, checking every format invariant.
    pub fn from_parts(
        pattern: SparsityPattern,
        shape: WeightShape,
        layout: Layout,
        values: Vec<i8>,
        offsets: Vec<u8>,
    ) -> Result<Self, FormatError> {
        let blocks = pattern.blocks(shape.reduction_len());
        let expected_values = shape.k * blocks;
        if values.len() != expected_values {
            return Err(FormatError::ValuesLength { got: values.len(), expected: expected_values });
        }
        if layout == Layout::InterleavedFc && shape.k % 2 != 0 {
            return Err(FormatError::OddChannels(shape.k));
        }
        let bits = pattern.offset_bits();
        let n_fields = expected_values * layout.fields_per_value();
        let expected_bytes = packed_len(n_fields, bits);
        if offsets.len() != expected_bytes {
            return Err(FormatError::OffsetsLength { got: offsets.len(), expected: expected_bytes });
        }
        let used_bits = n_fields * bits as usize;
        if used_bits % 8 != 0 && offsets[offsets.len() - 1] >> (used_bits % 8) != 0 {
            return Err(FormatError::DirtyPadding);
        }
        let w = Self { pattern, shape, values, offsets, layout };
        for field in 0..n_fields {
            let o = extract_offset(&w.offsets, field, bits)?;
            if usize::from(o) >= pattern.m() {
                return Err(FormatError::OffsetRange { field, offset: o, m: pattern.m() });
            }
        }
        if layout == Layout::ReplicatedConv {
            for pair in 0..expected_values {
                if extract_offset(&w.offsets, 2 * pair, bits)? != extract_offset(&w.offsets, 2 * pair + 1, bits)? {
                    return Err(FormatError::ReplicaMismatch { pair });
                }
            }
        }
        let red = shape.reduction_len();
        for ch in 0..shape.k {
            for b in 0..blocks {
                if w.value(ch, b) != 0 && b * pattern.m() + usize::from(w.offset(ch, b)) >= red {
                    return Err(FormatError::ValueInPadding { channel: ch, block: b });
                }
            }
        }
        Ok(w)
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn shape(&self) -> WeightShape {
        self.shape
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// Packed offset bytes in this tensor's layout.
    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Blocks per channel.
    pub fn blocks_per_channel(&self) -> usize {
        self.pattern.blocks(self.shape.reduction_len())
    }

    pub fn value(&self, channel: usize, block: usize) -> i8 {
        self.values[channel * self.blocks_per_channel() + block]
    }

    /// Index of the packed field holding the offset of `(channel, block)`.
    /// For the replicated layout this is the first of the two copies.
    pub fn field_index(&self, channel: usize, block: usize) -> usize {
        let b = self.blocks_per_channel();
        match self.layout {
            Layout::Plain => channel * b + block,
            Layout::ReplicatedConv => 2 * (channel * b + block),
            Layout::InterleavedFc => (channel / 2) * 2 * b + 2 * block + channel % 2,
        }
    }

    /// Offset of the non-zero of `(channel, block)` within its block, for any layout.
    pub fn offset(&self, channel: usize, block: usize) -> u8 {
        let bits = self.pattern.offset_bits();
        let bit = self.field_index(channel, block) * bits as usize;
        (self.offsets[bit / 8] >> (bit % 8)) & ((1 << bits) - 1)
    }

    /// Offsets of one channel in block order.
    pub fn channel_offsets(&self, channel: usize) -> Vec<u8> {
        (0..self.blocks_per_channel()).map(|b| self.offset(channel, b)).collect()
    }

    /// Same logical tensor with plain offsets.
    pub fn to_plain(&self) -> NmSparseWeights {
        if self.layout == Layout::Plain {
            return self.clone();
        }
        let fields: Vec<u8> = (0..self.shape.k).flat_map(|ch| self.channel_offsets(ch)).collect();
        NmSparseWeights {
            pattern: self.pattern,
            shape: self.shape,
            values: self.values.clone(),
            offsets: pack_fields(&fields, self.pattern.offset_bits()).expect("offsets fit their width"),
            layout: Layout::Plain,
        }
    }

    fn require(&self, layout: Layout) -> Result<(), FormatError> {
        if self.layout != layout {
            return Err(FormatError::WrongLayout { expected: layout, got: self.layout });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Compresses already-pruned dense weights into the plain layout.
///
/// Fails if any block holds more than one non-zero.
pub fn compress_nm(dense: &DenseWeights, pattern: SparsityPattern) -> Result<NmSparseWeights, FormatError> {
    let shape = dense.shape();
    let red = shape.reduction_len();
    let m = pattern.m();
    let blocks = pattern.blocks(red);
    let mut values = Vec::with_capacity(shape.k * blocks);
    let mut fields = Vec::with_capacity(shape.k * blocks);
    for ch in 0..shape.k {
        let row = dense.row(ch);
        for b in 0..blocks {
            let block = &row[b * m..((b + 1) * m).min(red)];
            let mut nz = block.iter().enumerate().filter(|(_, &v)| v != 0);
            let (offset, value) = match (nz.next(), nz.next()) {
                (None, _) => (0, 0),
                (Some((o, &v)), None) => (o as u8, v),
                (Some(_), Some(_)) => {
                    let count = block.iter().filter(|&&v| v != 0).count();
                    return Err(FormatError::BlockOverflow { channel: ch, block: b, count });
                }
            };
            values.push(value);
            fields.push(offset);
        }
    }
    let offsets = pack_fields(&fields, pattern.offset_bits())?;
    Ok(NmSparseWeights { pattern, shape, values, offsets, layout: Layout::Plain })
}

/// Expands plain-layout weights back to a dense tensor.
pub fn decompress_nm(sparse: &NmSparseWeights) -> Result<DenseWeights, FormatError> {
    sparse.require(Layout::Plain)?;
    Ok(decompress_any(sparse))
}

/// Dense expansion that reads offsets through whatever layout the tensor uses.
pub fn decompress_any(sparse: &NmSparseWeights) -> DenseWeights {
    let shape = sparse.shape();
    let red = shape.reduction_len();
    let m = sparse.pattern().m();
    let mut data = vec![0i8; shape.len()];
    for ch in 0..shape.k {
        for b in 0..sparse.blocks_per_channel() {
            let v = sparse.value(ch, b);
            if v != 0 {
                data[ch * red + b * m + usize::from(sparse.offset(ch, b))] = v;
            }
        }
    }
    DenseWeights { shape, data }
}

/// Stores every offset field twice: `[a, b] -> [a, a, b, b]`.
pub fn replicate_offsets(sparse: &NmSparseWeights) -> Result<NmSparseWeights, FormatError> {
    sparse.require(Layout::Plain)?;
    let bits = sparse.pattern.offset_bits();
    let fields = unpack_fields(&sparse.offsets, sparse.values.len(), bits)?;
    let doubled: Vec<u8> = fields.iter().flat_map(|&f| [f, f]).collect();
    Ok(NmSparseWeights {
        offsets: pack_fields(&doubled, bits)?,
        layout: Layout::ReplicatedConv,
        ..sparse.clone()
    })
}

/// Alternates the offsets of channel pairs: `ch0 = [a0, a1], ch1 = [b0, b1] -> [a0, b0, a1, b1]`.
pub fn interleave_offsets_fc(sparse: &NmSparseWeights) -> Result<NmSparseWeights, FormatError> {
    sparse.require(Layout::Plain)?;
    let k = sparse.shape.k;
    if k % 2 != 0 {
        return Err(FormatError::OddChannels(k));
    }
    let blocks = sparse.blocks_per_channel();
    let mut fields = Vec::with_capacity(k * blocks);
    for pair in 0..k / 2 {
        for b in 0..blocks {
            fields.push(sparse.offset(2 * pair, b));
            fields.push(sparse.offset(2 * pair + 1, b));
        }
    }
    Ok(NmSparseWeights {
        offsets: pack_fields(&fields, sparse.pattern.offset_bits())?,
        layout: Layout::InterleavedFc,
        ..sparse.clone()
    })
}

/// Appends an all-zero output channel when `k` is odd, so the tensor can be interleaved.
pub fn pad_channels_even(sparse: &NmSparseWeights) -> Result<NmSparseWeights, FormatError> {
    sparse.require(Layout::Plain)?;
    if sparse.shape.k % 2 == 0 {
        return Ok(sparse.clone());
    }
    let blocks = sparse.blocks_per_channel();
    let mut values = sparse.values.clone();
    values.extend(std::iter::repeat(0).take(blocks));
    let mut fields = unpack_fields(&sparse.offsets, sparse.values.len(), sparse.pattern.offset_bits())?;
    fields.extend(std::iter::repeat(0).take(blocks));
    let shape = WeightShape { k: sparse.shape.k + 1, ..sparse.shape };
    NmSparseWeights::from_parts(sparse.pattern, shape, Layout::Plain, values, pack_fields(&fields, sparse.pattern.offset_bits())?)
}

/// Converts a plain tensor to `layout`.
pub fn with_layout(sparse: &NmSparseWeights, layout: Layout) -> Result<NmSparseWeights, FormatError> {
    match layout {
        Layout::Plain => Ok(sparse.to_plain()),
        Layout::ReplicatedConv => replicate_offsets(&sparse.to_plain()),
        Layout::InterleavedFc => interleave_offsets_fc(&sparse.to_plain()),
    }
}
