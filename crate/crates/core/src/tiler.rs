//! Sparse-aware L1 tiling and the L2 storage plan.
//!
//! Weight tiles are sized from the bits each format spends per dense weight
//! position, offsets included. Spatial tiles re-fetch their input halo.

use crate::geometry::{LayerGeometry, LayerKind, WeightShape};
use crate::sparse_format::{
    pack_fields, unpack_fields, DenseWeights, FormatError, Layout, NmSparseWeights, SparsityPattern,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_L1_BUDGET: usize = 128 * 1024;

#[derive(Debug, Error, PartialEq)]
pub enum TilerError {
    #[error("L1 budget of {budget} bytes cannot hold the smallest tile ({required} bytes)")]
    Infeasible { required: usize, budget: usize },
    #[error("tile of {0} channels splits an interleaved channel pair")]
    OddTile(usize),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Tightest 1:M pattern the tensor already satisfies, if any.
pub fn recognize_pattern(dense: &DenseWeights) -> Option<SparsityPattern> {
    let red = dense.shape().reduction_len();
    let conforms = |m: usize| {
        (0..dense.shape().k).all(|ch| dense.row(ch).chunks(m).all(|b| b.iter().filter(|&&v| v != 0).count() <= 1))
    };
    if red == 0 {
        return Some(SparsityPattern::ONE_OF_16);
    }
    SparsityPattern::ALL.iter().rev().copied().find(|p| conforms(p.m()))
}

/// Storage format of the weights being tiled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightFormat {
    Dense,
    Sparse { pattern: SparsityPattern, layout: Layout },
}

impl WeightFormat {
    /// Bits per dense weight position, as `(numerator, denominator)`.
    fn bits_ratio(self) -> (usize, usize) {
        match self {
            WeightFormat::Dense => (8, 1),
            WeightFormat::Sparse { pattern, layout } => {
                (8 + layout.fields_per_value() * pattern.offset_bits() as usize, pattern.m())
            }
        }
    }

    pub fn bits_per_dense_weight(self) -> f64 {
        let (n, d) = self.bits_ratio();
        n as f64 / d as f64
    }

    /// Bytes of `k` weight rows of a layer with reduction length `red`.
    pub fn weight_bytes(self, k: usize, red: usize) -> usize {
        match self {
            WeightFormat::Dense => k * red,
            WeightFormat::Sparse { pattern, .. } => {
                let (n, _) = self.bits_ratio();
                (k * pattern.blocks(red) * n).div_ceil(8)
            }
        }
    }

    fn channel_granule(self) -> usize {
        match self {
            WeightFormat::Sparse { layout: Layout::InterleavedFc, .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilerOptions {
    pub l1_budget: usize,
    pub n_cores: usize,
    /// Double the tile buffers so transfers overlap compute.
    pub double_buffer: bool,
}

impl Default for TilerOptions {
    fn default() -> Self {
        Self { l1_budget: DEFAULT_L1_BUDGET, n_cores: 8, double_buffer: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct L1Usage {
    pub input: usize,
    pub output: usize,
    pub weights: usize,
    pub bias: usize,
    pub im2col: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConfig {
    pub tile_k: usize,
    pub tile_oy: usize,
    pub tile_ox: usize,
    /// Always the full input depth: the kernels reduce over all channels at once.
    pub tile_c: usize,
    pub n_tiles_k: usize,
    pub n_tiles_oy: usize,
    pub n_tiles_ox: usize,
    pub format: WeightFormat,
    pub l1: L1Usage,
    pub l1_bytes_used: usize,
}

impl TileConfig {
    /// Recomputes the L1 footprint from the extents alone.
    pub fn recompute(&self, g: &LayerGeometry, opts: &TilerOptions) -> usize {
        l1_usage(g, self.format, opts, self.tile_k, self.tile_oy, self.tile_ox).total
    }

    pub fn fits(&self, g: &LayerGeometry, opts: &TilerOptions) -> bool {
        self.recompute(g, opts) <= opts.l1_budget
    }
}

fn l1_usage(g: &LayerGeometry, f: WeightFormat, opts: &TilerOptions, tk: usize, toy: usize, tox: usize) -> L1Usage {
    let red = g.reduction_len();
    let (input, im2col) = match g.kind {
        LayerKind::Conv => {
            let ih = ((toy - 1) * g.s + g.fy).min(g.iy);
            let iw = ((tox - 1) * g.s + g.fx).min(g.ix);
            (ih * iw * g.c, red * 2 * opts.n_cores)
        }
        LayerKind::Fc => (g.c, 0),
    };
    let output = toy * tox * tk;
    let weights = f.weight_bytes(tk, red);
    let bias = 4 * tk;
    let buffers = if opts.double_buffer { 2 } else { 1 };
    let total = buffers * (input + output + weights + bias) + im2col;
    L1Usage { input, output, weights, bias, im2col, total }
}

/// Largest `v` in `[lo, hi]` (stepping by `step` from `lo`) with `fits(v)`, assuming monotonicity.
fn largest(lo: usize, hi: usize, step: usize, fits: impl Fn(usize) -> bool) -> usize {
    let (mut a, mut b) = (0, (hi - lo) / step);
    while a < b {
        let mid = (a + b + 1) / 2;
        if fits(lo + mid * step) {
            a = mid;
        } else {
            b = mid - 1;
        }
    }
    if hi > lo + b * step && (hi - lo) % step != 0 && fits(hi) {
        return hi;
    }
    lo + a * step
}

/// Greedy tile search: output channels first, then rows, then columns.
pub fn plan_tiles(g: &LayerGeometry, format: WeightFormat, opts: &TilerOptions) -> Result<TileConfig, TilerError> {
    let gran = format.channel_granule();
    let k_total = g.k.next_multiple_of(gran);
    let min_k = gran.min(k_total);
    let usage = |tk, toy, tox| l1_usage(g, format, opts, tk, toy, tox);
    let minimal = usage(min_k, 1, 1).total;
    if minimal > opts.l1_budget {
        return Err(TilerError::Infeasible { required: minimal, budget: opts.l1_budget });
    }
    let fits = |tk, toy, tox| usage(tk, toy, tox).total <= opts.l1_budget;
    let tk = largest(min_k, k_total, gran, |v| fits(v, 1, 1));
    let toy = largest(1, g.oy, 1, |v| fits(tk, v, 1));
    let tox = largest(1, g.ox, 1, |v| fits(tk, toy, v));
    let l1 = usage(tk, toy, tox);
    Ok(TileConfig {
        tile_k: tk,
        tile_oy: toy,
        tile_ox: tox,
        tile_c: g.c,
        n_tiles_k: k_total.div_ceil(tk),
        n_tiles_oy: g.oy.div_ceil(toy),
        n_tiles_ox: g.ox.div_ceil(tox),
        format,
        l1,
        l1_bytes_used: l1.total,
    })
}

// ---------------------------------------------------------------------------
// Storage plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Output channels `[start, end)`.
    pub channels: (usize, usize),
    /// Byte range of the values in the image.
    pub values: (usize, usize),
    /// Byte range of the packed offsets in the image.
    pub offsets: (usize, usize),
}

impl Segment {
    /// The single contiguous transfer covering this tile.
    pub fn transfer(&self) -> (usize, usize) {
        (self.values.0, self.offsets.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoragePlan {
    pub pattern: SparsityPattern,
    pub shape: WeightShape,
    pub layout: Layout,
    pub segments: Vec<Segment>,
    pub total_bytes: usize,
}

/// Storage plan for the K-tiling of `tiles`.
pub fn layout_interleaved(w: &NmSparseWeights, tiles: &TileConfig) -> Result<(StoragePlan, Vec<u8>), TilerError> {
    layout_by_tile_k(w, tiles.tile_k)
}

/// Per K-tile: the tile's values immediately followed by its offsets.
/// Offsets are kept in the tensor's own layout (replicated ones stay replicated).
pub fn layout_by_tile_k(w: &NmSparseWeights, tile_k: usize) -> Result<(StoragePlan, Vec<u8>), TilerError> {
    let k = w.shape().k;
    let tile_k = tile_k.clamp(1, k.max(1));
    if w.layout() == Layout::InterleavedFc && tile_k % 2 != 0 && tile_k < k {
        return Err(TilerError::OddTile(tile_k));
    }
    let bits = w.pattern().offset_bits();
    let per_ch = w.blocks_per_channel() * w.layout().fields_per_value();
    let all_fields = unpack_fields(w.offsets(), k * per_ch, bits)?;
    let mut image = Vec::with_capacity(w.values().len() + w.offsets().len() + k);
    let mut segments = Vec::new();
    let mut c0 = 0;
    while c0 < k {
        let c1 = (c0 + tile_k).min(k);
        let b = w.blocks_per_channel();
        let v0 = image.len();
        image.extend(w.values()[c0 * b..c1 * b].iter().map(|&v| v as u8));
        let o0 = image.len();
        image.extend(pack_fields(&all_fields[c0 * per_ch..c1 * per_ch], bits)?);
        segments.push(Segment { channels: (c0, c1), values: (v0, o0), offsets: (o0, image.len()) });
        c0 = c1;
    }
    let plan = StoragePlan {
        pattern: w.pattern(),
        shape: w.shape(),
        layout: w.layout(),
        segments,
        total_bytes: image.len(),
    };
    Ok((plan, image))
}

/// Reassembles the tensor from a plan and its image.
pub fn read_back(plan: &StoragePlan, image: &[u8]) -> Result<NmSparseWeights, TilerError> {
    let bits = plan.pattern.offset_bits();
    let blocks = plan.pattern.blocks(plan.shape.reduction_len());
    let per_ch = blocks * plan.layout.fields_per_value();
    let mut values = Vec::new();
    let mut fields = Vec::new();
    let slice = |(a, b): (usize, usize)| {
        image.get(a..b).ok_or_else(|| FormatError::File(format!("segment {a}..{b} outside image of {}", image.len())))
    };
    for s in &plan.segments {
        let n = s.channels.1 - s.channels.0;
        values.extend(slice(s.values)?.iter().map(|&v| v as i8));
        fields.extend(unpack_fields(slice(s.offsets)?, n * per_ch, bits)?);
    }
    let offsets = pack_fields(&fields, bits)?;
    Ok(NmSparseWeights::from_parts(plan.pattern, plan.shape, plan.layout, values, offsets)?)
}
