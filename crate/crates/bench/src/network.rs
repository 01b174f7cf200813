//! Layer sequences run end to end with chained activations.

use crate::gen::derive_seed;
use crate::runner::{baseline_kernel, prepare, run_kernel, sparse_kernel, weights_for, Sparsity};
use crate::sweep::kind_name;
use crate::BenchError;
use nmsparse::geometry::{LayerGeometry, LayerKind, Tensor};
use nmsparse::kernels::{KernelId, RunOptions, DEFAULT_CORES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

fn default_true() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Output channels (conv) or output features (FC).
    pub k: usize,
    #[serde(default = "one")]
    pub fx: usize,
    #[serde(default = "one")]
    pub fy: usize,
    #[serde(default = "one")]
    pub s: usize,
    #[serde(default)]
    pub p: usize,
    /// Whether the network-wide sparsity applies; unprunable layers stay dense.
    #[serde(default = "default_true")]
    pub prunable: bool,
    /// Per-layer sparsity, overriding the network-wide one.
    #[serde(default)]
    pub sparsity: Option<Sparsity>,
    /// Name of the layer whose output feeds this one, or "input"; defaults to the previous layer.
    #[serde(default)]
    pub from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Shape,
    pub sparsity: Sparsity,
    #[serde(default)]
    pub isa: bool,
    #[serde(default = "default_cores")]
    pub n_cores: usize,
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

fn default_cores() -> usize {
    DEFAULT_CORES
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub kernel: KernelId,
    pub sparsity: Sparsity,
    pub c: usize,
    pub k: usize,
    pub iy: usize,
    pub ix: usize,
    pub oy: usize,
    pub ox: usize,
    pub fy: usize,
    pub fx: usize,
    pub instr: u64,
    pub macs_effective: u64,
    pub macs_dense_equiv: u64,
    pub baseline: KernelId,
    pub baseline_instr: u64,
    pub speedup: f64,
    pub weight_bytes: usize,
    pub dense_weight_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTotals {
    pub instr: u64,
    pub baseline_instr: u64,
    pub speedup: f64,
    pub macs_dense_equiv: u64,
    pub weight_bytes: usize,
    pub dense_weight_bytes: usize,
    /// `weight_bytes / dense_weight_bytes`.
    pub weight_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub name: String,
    pub sparsity: Sparsity,
    pub isa: bool,
    pub n_cores: usize,
    pub layers: Vec<LayerRow>,
    pub total: NetworkTotals,
}

fn geometry_for(l: &LayerSpec, src: &Shape) -> Result<LayerGeometry, BenchError> {
    let g = match l.kind {
        LayerKind::Conv => LayerGeometry::conv(src.w, src.h, src.c, l.k, l.fx, l.fy, l.p, l.s),
        LayerKind::Fc => LayerGeometry::fc(src.h * src.w * src.c, l.k),
    };
    g.map_err(|e| BenchError::Shape(format!("layer '{}': {e}", l.name)))
}

fn output_shape(g: &LayerGeometry) -> Shape {
    Shape { h: g.oy, w: g.ox, c: g.k }
}

fn as_input(t: &Tensor, g: &LayerGeometry) -> Tensor {
    match g.kind {
        LayerKind::Conv => t.clone(),
        LayerKind::Fc => Tensor::vector(t.data.clone()),
    }
}

/// Runs each layer on its source's output; every layer is also run with the
/// dense baseline kernel, which must produce the identical output.
pub fn run_network(spec: &NetworkSpec) -> Result<NetworkReport, BenchError> {
    if spec.layers.is_empty() {
        return Err(BenchError::Shape("network has no layers".into()));
    }
    let opts = RunOptions::cores(spec.n_cores);
    let mut outputs: Vec<(String, Shape, Tensor)> = Vec::new();
    let mut rows = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        let src = match l.from.as_deref() {
            None if i == 0 => None,
            None => Some(outputs.len() - 1),
            Some("input") => None,
            Some(name) => Some(
                outputs
                    .iter()
                    .position(|(n, _, _)| n == name)
                    .ok_or_else(|| BenchError::Shape(format!("layer '{}' reads unknown layer '{name}'", l.name)))?,
            ),
        };
        let src_shape = src.map_or(spec.input.clone(), |j| outputs[j].1.clone());
        let g = geometry_for(l, &src_shape)?;
        let sparsity = match (l.prunable, l.sparsity) {
            (_, Some(s)) => s,
            (true, None) => spec.sparsity,
            (false, None) => Sparsity::Dense,
        };
        let kernel = match sparsity {
            Sparsity::Dense if l.kind == LayerKind::Conv => KernelId::ConvDense4x2,
            Sparsity::Dense => KernelId::FcDense,
            Sparsity::Nm(_) => sparse_kernel(l.kind, spec.isa),
        };
        let mut layer = prepare(kernel, &g, sparsity, derive_seed(spec.seed, &[i as u64]))?;
        if let Some(j) = src {
            layer.input = as_input(&outputs[j].2, &g);
        }
        let run = run_kernel(kernel, &layer.input, &layer.weights, &g, &layer.quant, &opts)?;
        let baseline = baseline_kernel(l.kind);
        let base_w = weights_for(baseline, &layer.dense, sparsity)?;
        let base = run_kernel(baseline, &layer.input, &base_w, &g, &layer.quant, &opts)?;
        if base.output != run.output {
            return Err(BenchError::Invariant(format!("layer '{}': {kernel} and {baseline} outputs differ", l.name)));
        }
        let cost = &run.cost;
        rows.push(LayerRow {
            name: l.name.clone(),
            kind: kind_name(l.kind).into(),
            kernel,
            sparsity,
            c: g.c,
            k: g.k,
            iy: g.iy,
            ix: g.ix,
            oy: g.oy,
            ox: g.ox,
            fy: g.fy,
            fx: g.fx,
            instr: cost.instructions,
            macs_effective: cost.macs_effective,
            macs_dense_equiv: cost.macs_dense_equiv,
            baseline,
            baseline_instr: base.cost.instructions,
            speedup: base.cost.instructions as f64 / cost.instructions as f64,
            weight_bytes: layer.weights.bytes(),
            dense_weight_bytes: layer.dense.data().len(),
        });
        if outputs.iter().any(|(n, _, _)| n == &l.name) {
            return Err(BenchError::Shape(format!("duplicate layer name '{}'", l.name)));
        }
        outputs.push((l.name.clone(), output_shape(&g), run.output));
    }
    let instr: u64 = rows.iter().map(|r| r.instr).sum();
    let baseline_instr: u64 = rows.iter().map(|r| r.baseline_instr).sum();
    let weight_bytes: usize = rows.iter().map(|r| r.weight_bytes).sum();
    let dense_weight_bytes: usize = rows.iter().map(|r| r.dense_weight_bytes).sum();
    let total = NetworkTotals {
        instr,
        baseline_instr,
        speedup: baseline_instr as f64 / instr as f64,
        macs_dense_equiv: rows.iter().map(|r| r.macs_dense_equiv).sum(),
        weight_bytes,
        dense_weight_bytes,
        weight_ratio: weight_bytes as f64 / dense_weight_bytes as f64,
    };
    Ok(NetworkReport {
        name: spec.name.clone(),
        sparsity: spec.sparsity,
        isa: spec.isa,
        n_cores: spec.n_cores,
        layers: rows,
        total,
    })
}
