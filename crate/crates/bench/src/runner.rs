//! Single-kernel runs on generated layers.

use crate::gen::{default_quant, derive_seed, random_conforming_dense, random_dense, random_input, rng};
use crate::BenchError;
use nmsparse::geometry::{LayerGeometry, LayerKind, Tensor};
use nmsparse::kernels::{
    conv_dense_1x2, conv_dense_4x2, conv_reference, conv_sparse_isa, conv_sparse_sw, fc_dense, fc_reference,
    fc_sparse_isa, fc_sparse_sw, prepare_fc_isa, KernelId, KernelRun, QuantParams, RunOptions,
};
use nmsparse::sparse_format::{compress_nm, with_layout, DenseWeights, Layout, NmSparseWeights, SparsityPattern};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sparsity {
    Dense,
    Nm(SparsityPattern),
}

impl Sparsity {
    pub const SWEEP: [Sparsity; 4] = [
        Sparsity::Dense,
        Sparsity::Nm(SparsityPattern::ONE_OF_4),
        Sparsity::Nm(SparsityPattern::ONE_OF_8),
        Sparsity::Nm(SparsityPattern::ONE_OF_16),
    ];

    /// Block size, 1 when dense.
    pub fn m(self) -> usize {
        match self {
            Sparsity::Dense => 1,
            Sparsity::Nm(p) => p.m(),
        }
    }

    pub fn pattern(self) -> Option<SparsityPattern> {
        match self {
            Sparsity::Dense => None,
            Sparsity::Nm(p) => Some(p),
        }
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sparsity::Dense => f.write_str("dense"),
            Sparsity::Nm(p) => write!(f, "1:{}", p.m()),
        }
    }
}

impl FromStr for Sparsity {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("dense") {
            return Ok(Sparsity::Dense);
        }
        let m = s
            .strip_prefix("1:")
            .and_then(|m| m.parse::<usize>().ok())
            .ok_or_else(|| BenchError::Invalid(format!("sparsity '{s}' is not dense, 1:4, 1:8 or 1:16")))?;
        Ok(Sparsity::Nm(SparsityPattern::new(m)?))
    }
}

impl Serialize for Sparsity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Sparsity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sparse kernel for a layer kind and extension setting.
pub fn sparse_kernel(kind: LayerKind, isa: bool) -> KernelId {
    match (kind, isa) {
        (LayerKind::Conv, false) => KernelId::ConvSparseSw,
        (LayerKind::Conv, true) => KernelId::ConvSparseIsa,
        (LayerKind::Fc, false) => KernelId::FcSparseSw,
        (LayerKind::Fc, true) => KernelId::FcSparseIsa,
    }
}

/// Dense kernel the speedups of a layer kind are quoted against.
pub fn baseline_kernel(kind: LayerKind) -> KernelId {
    match kind {
        LayerKind::Conv => KernelId::ConvDense1x2,
        LayerKind::Fc => KernelId::FcDense,
    }
}

/// Weight layout a sparse kernel consumes.
pub fn kernel_layout(kernel: KernelId) -> Layout {
    match kernel {
        KernelId::ConvSparseIsa => Layout::ReplicatedConv,
        KernelId::FcSparseIsa => Layout::InterleavedFc,
        _ => Layout::Plain,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerWeights {
    Dense(DenseWeights),
    Sparse(NmSparseWeights),
}

impl LayerWeights {
    /// Bytes the kernel reads from memory: values plus packed offsets for sparse tensors.
    pub fn bytes(&self) -> usize {
        match self {
            LayerWeights::Dense(d) => d.data().len(),
            LayerWeights::Sparse(s) => s.values().len() + s.offsets().len(),
        }
    }
}

/// A generated layer with weights already in the kernel's layout.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    pub kernel: KernelId,
    pub geometry: LayerGeometry,
    pub sparsity: Sparsity,
    pub input: Tensor,
    pub weights: LayerWeights,
    /// Dense view of the same weights, for reference checks.
    pub dense: DenseWeights,
    pub quant: QuantParams,
}

fn check_kernel(kernel: KernelId, g: &LayerGeometry, sparsity: Sparsity) -> Result<(), BenchError> {
    if kernel.kind() != g.kind {
        return Err(BenchError::Invalid(format!("{kernel} cannot run a {:?} layer", g.kind)));
    }
    if kernel.is_sparse() && sparsity == Sparsity::Dense {
        return Err(BenchError::Invalid(format!("{kernel} needs a 1:M sparsity")));
    }
    Ok(())
}

/// Converts a dense tensor into what `kernel` consumes.
pub fn weights_for(kernel: KernelId, dense: &DenseWeights, sparsity: Sparsity) -> Result<LayerWeights, BenchError> {
    let Some(pattern) = sparsity.pattern().filter(|_| kernel.is_sparse()) else {
        return Ok(LayerWeights::Dense(dense.clone()));
    };
    let plain = compress_nm(dense, pattern)?;
    let w = match kernel {
        KernelId::FcSparseIsa => prepare_fc_isa(&plain)?,
        k => with_layout(&plain, kernel_layout(k))?,
    };
    Ok(LayerWeights::Sparse(w))
}

/// Generates input, weights and quantization for one layer. Dense kernels at a
/// 1:M sparsity run on the pruned tensor, so baselines see identical weights.
pub fn prepare(kernel: KernelId, g: &LayerGeometry, sparsity: Sparsity, seed: u64) -> Result<PreparedLayer, BenchError> {
    g.validate().map_err(|e| BenchError::Invalid(e.to_string()))?;
    check_kernel(kernel, g, sparsity)?;
    let mut r = rng(derive_seed(seed, &[g.c as u64, g.k as u64, sparsity.m() as u64]));
    let shape = g.weight_shape();
    let dense = match sparsity {
        Sparsity::Dense => random_dense(&mut r, shape),
        Sparsity::Nm(p) => random_conforming_dense(&mut r, shape, p),
    };
    let input = random_input(&mut r, g);
    let quant = default_quant(&mut r, g, g.reduction_len().div_ceil(sparsity.m()));
    let weights = weights_for(kernel, &dense, sparsity)?;
    Ok(PreparedLayer { kernel, geometry: *g, sparsity, input, weights, dense, quant })
}

pub fn run_kernel(
    kernel: KernelId,
    input: &Tensor,
    weights: &LayerWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, BenchError> {
    let run = match (kernel, weights) {
        (KernelId::ConvDense4x2, LayerWeights::Dense(w)) => conv_dense_4x2(input, w, g, q, opts),
        (KernelId::ConvDense1x2, LayerWeights::Dense(w)) => conv_dense_1x2(input, w, g, q, opts),
        (KernelId::FcDense, LayerWeights::Dense(w)) => fc_dense(input, w, g, q, opts),
        (KernelId::ConvSparseSw, LayerWeights::Sparse(w)) => conv_sparse_sw(input, w, g, q, opts),
        (KernelId::ConvSparseIsa, LayerWeights::Sparse(w)) => conv_sparse_isa(input, w, g, q, opts),
        (KernelId::FcSparseSw, LayerWeights::Sparse(w)) => fc_sparse_sw(input, w, g, q, opts),
        (KernelId::FcSparseIsa, LayerWeights::Sparse(w)) => fc_sparse_isa(input, w, g, q, opts),
        (k, _) => return Err(BenchError::Invalid(format!("{k} given the wrong weight representation"))),
    };
    Ok(run?)
}

pub fn reference_output(layer: &PreparedLayer) -> Tensor {
    match layer.geometry.kind {
        LayerKind::Conv => conv_reference(&layer.input, &layer.dense, &layer.geometry, &layer.quant),
        LayerKind::Fc => fc_reference(&layer.input, &layer.dense, &layer.quant),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub kernel: KernelId,
    pub geometry: LayerGeometry,
    pub sparsity: Sparsity,
    pub n_cores: usize,
    pub seed: u64,
    /// Identical runs to perform; all must agree.
    pub repetitions: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub layer: PreparedLayer,
    pub run: KernelRun,
    pub weight_bytes: usize,
}

/// Runs a spec, checks the output against the reference and that repetitions agree.
pub fn run_bench(spec: &BenchSpec, trace: bool) -> Result<BenchOutcome, BenchError> {
    let layer = prepare(spec.kernel, &spec.geometry, spec.sparsity, spec.seed)?;
    let mut opts = RunOptions::cores(spec.n_cores);
    opts.trace = trace;
    let run = run_kernel(spec.kernel, &layer.input, &layer.weights, &layer.geometry, &layer.quant, &opts)?;
    for _ in 1..spec.repetitions.max(1) {
        let again = run_kernel(spec.kernel, &layer.input, &layer.weights, &layer.geometry, &layer.quant, &opts)?;
        if again.output != run.output || again.cost != run.cost {
            return Err(BenchError::Invariant(format!("{}: repeated run differs", spec.kernel)));
        }
    }
    if run.output != reference_output(&layer) {
        return Err(BenchError::Invariant(format!(
            "{} {} C={}: output differs from the reference convolution",
            spec.kernel, spec.sparsity, spec.geometry.c
        )));
    }
    let weight_bytes = layer.weights.bytes();
    Ok(BenchOutcome { layer, run, weight_bytes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_text() {
        for s in Sparsity::SWEEP {
            assert_eq!(s.to_string().parse::<Sparsity>().unwrap(), s);
        }
        assert!("2:4".parse::<Sparsity>().is_err());
        assert!("1:5".parse::<Sparsity>().is_err());
        assert_eq!(serde_json::to_string(&Sparsity::Nm(SparsityPattern::ONE_OF_8)).unwrap(), "\"1:8\"");
    }

    #[test]
    fn every_kernel_matches_reference() {
        let conv = LayerGeometry::conv(5, 4, 6, 5, 3, 3, 1, 1).unwrap();
        let fc = LayerGeometry::fc(40, 5).unwrap();
        for kernel in [
            KernelId::ConvDense4x2,
            KernelId::ConvDense1x2,
            KernelId::ConvSparseSw,
            KernelId::ConvSparseIsa,
            KernelId::FcDense,
            KernelId::FcSparseSw,
            KernelId::FcSparseIsa,
        ] {
            let g = if kernel.kind() == LayerKind::Conv { conv } else { fc };
            let spec = BenchSpec {
                kernel,
                geometry: g,
                sparsity: Sparsity::Nm(SparsityPattern::ONE_OF_8),
                n_cores: 3,
                seed: 4,
                repetitions: 2,
            };
            let out = run_bench(&spec, false).unwrap();
            assert!(out.run.cost.instructions > 0);
        }
    }

    #[test]
    fn sparse_kernel_rejects_dense() {
        let g = LayerGeometry::fc(16, 2).unwrap();
        assert!(prepare(KernelId::FcSparseSw, &g, Sparsity::Dense, 0).is_err());
        assert!(prepare(KernelId::ConvDense1x2, &g, Sparsity::Dense, 0).is_err());
    }
}
