//! Memory-footprint arithmetic for 1:M, COO and CSR storage of int8 weights.

use super::{Layout, SparsityPattern};
use crate::geometry::WeightShape;
use serde::{Deserialize, Serialize};

const VALUE_BITS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub dense_bits: u64,
    pub values_bits: u64,
    pub index_bits: u64,
    pub total_bits: u64,
    /// `1 - total_bits / dense_bits`; negative when the format is larger than dense.
    pub reduction: f64,
}

impl FootprintReport {
    fn new(dense_bits: u64, values_bits: u64, index_bits: u64) -> Self {
        let total_bits = values_bits + index_bits;
        let reduction = if dense_bits == 0 { 0.0 } else { 1.0 - total_bits as f64 / dense_bits as f64 };
        Self { dense_bits, values_bits, index_bits, total_bits, reduction }
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bits.div_ceil(8)
    }
}

/// Exact bit counts of a 1:M tensor: 8 bits per stored value plus the offset
/// fields (doubled for the replicated conv layout).
pub fn footprint_nm(shape: &WeightShape, pattern: SparsityPattern, layout: Layout) -> FootprintReport {
    let dense_bits = shape.len() as u64 * VALUE_BITS;
    let stored = (shape.k * pattern.blocks(shape.reduction_len())) as u64;
    let index_bits = stored * u64::from(pattern.offset_bits()) * layout.fields_per_value() as u64;
    FootprintReport::new(dense_bits, stored * VALUE_BITS, index_bits)
}

fn nnz(shape: &WeightShape, sparsity: f64) -> u64 {
    assert!((0.0..=1.0).contains(&sparsity), "sparsity fraction must lie in [0, 1], got {sparsity}");
    (shape.len() as f64 * (1.0 - sparsity)).round() as u64
}

/// COO: every non-zero carries its value and a row and a column index.
pub fn footprint_coo(shape: &WeightShape, sparsity: f64, index_bits: u32) -> FootprintReport {
    let nnz = nnz(shape, sparsity);
    FootprintReport::new(shape.len() as u64 * VALUE_BITS, nnz * VALUE_BITS, nnz * 2 * u64::from(index_bits))
}

/// CSR over a `k x (fx*fy*c)` matrix: values, one column index per non-zero,
/// and `k + 1` row pointers.
pub fn footprint_csr(shape: &WeightShape, sparsity: f64, index_bits: u32) -> FootprintReport {
    let nnz = nnz(shape, sparsity);
    let ib = u64::from(index_bits);
    FootprintReport::new(shape.len() as u64 * VALUE_BITS, nnz * VALUE_BITS, nnz * ib + (shape.k as u64 + 1) * ib)
}

/// Sparsity at which COO with int8 values and two `index_bits` indices matches dense size.
pub fn coo_break_even_sparsity(index_bits: u32) -> f64 {
    1.0 - VALUE_BITS as f64 / (VALUE_BITS as f64 + 2.0 * f64::from(index_bits))
}
