//! Seeded generators for conforming layers.

use nmsparse::geometry::{LayerGeometry, Tensor, WeightShape};
use nmsparse::kernels::QuantParams;
use nmsparse::sparse_format::{compress_nm, DenseWeights, NmSparseWeights, SparsityPattern};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub type BenchRng = ChaCha8Rng;

pub fn rng(seed: u64) -> BenchRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a run seed with a case label into an independent stream seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: &[u64]) -> u64 {
    let mut z = seed;
    for &v in label {
        z = z.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn nonzero(rng: &mut BenchRng) -> i8 {
    let v = rng.gen_range(1..=127i8);
    if rng.gen() {
        v
    } else {
        -v
    }
}

pub fn random_dense(rng: &mut BenchRng, shape: WeightShape) -> DenseWeights {
    let data = (0..shape.len()).map(|_| rng.gen_range(-127..=127)).collect();
    DenseWeights::new(shape, data).expect("length matches shape")
}

/// Exactly one non-zero per block, at a uniform position; a trailing partial
/// block draws its position from the in-range elements only.
pub fn random_conforming_dense(rng: &mut BenchRng, shape: WeightShape, pattern: SparsityPattern) -> DenseWeights {
    let red = shape.reduction_len();
    let m = pattern.m();
    let mut data = vec![0i8; shape.len()];
    for ch in 0..shape.k {
        for b in 0..red.div_ceil(m) {
            let len = m.min(red - b * m);
            data[ch * red + b * m + rng.gen_range(0..len)] = nonzero(rng);
        }
    }
    DenseWeights::new(shape, data).expect("length matches shape")
}

pub fn random_sparse(rng: &mut BenchRng, shape: WeightShape, pattern: SparsityPattern) -> NmSparseWeights {
    compress_nm(&random_conforming_dense(rng, shape, pattern), pattern).expect("generated tensor conforms")
}

pub fn random_input(rng: &mut BenchRng, g: &LayerGeometry) -> Tensor {
    let data = (0..g.input_len()).map(|_| rng.gen_range(-128..=127)).collect();
    Tensor::new(g.iy, g.ix, g.c, data).expect("length matches geometry")
}

/// Small bias and a shift that keeps typical outputs off the clamp rails.
pub fn default_quant(rng: &mut BenchRng, g: &LayerGeometry, nonzeros_per_row: usize) -> QuantParams {
    let spread = (nonzeros_per_row.max(1) as f64).sqrt() * 127.0 * 74.0;
    let shift = (spread.log2().ceil() as i32 - 7).clamp(0, 31) as u8;
    let bias = (0..g.k).map(|_| rng.gen_range(-4096..=4096)).collect();
    QuantParams::shift(shift).with_bias(bias)
}
