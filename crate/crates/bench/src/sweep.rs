//! Single-layer sweeps over input depth and sparsity.

use crate::runner::{baseline_kernel, kernel_layout, run_bench, sparse_kernel, BenchOutcome, BenchSpec, Sparsity};
use crate::BenchError;
use nmsparse::geometry::{LayerGeometry, LayerKind};
use nmsparse::kernels::{KernelId, DEFAULT_CORES};
use nmsparse::tiler::{plan_tiles, TileConfig, TilerOptions, WeightFormat, DEFAULT_L1_BUDGET};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsaMode {
    Off,
    On,
    Both,
}

impl IsaMode {
    fn choices(self) -> &'static [bool] {
        match self {
            IsaMode::Off => &[false],
            IsaMode::On => &[true],
            IsaMode::Both => &[false, true],
        }
    }
}

impl FromStr for IsaMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(IsaMode::Off),
            "on" => Ok(IsaMode::On),
            "both" => Ok(IsaMode::Both),
            _ => Err(BenchError::Invalid(format!("isa-ext must be on, off or both, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: LayerKind,
    pub c_list: Vec<usize>,
    pub sparsities: Vec<Sparsity>,
    pub isa: IsaMode,
    pub n_cores: usize,
    pub seed: u64,
    pub k: usize,
    /// Input rows and columns (conv).
    pub spatial: usize,
    /// Filter rows and columns (conv).
    pub filter: usize,
    pub stride: usize,
    pub padding: usize,
    pub l1_budget: usize,
}

impl SweepConfig {
    /// K=256, 8x8 input, 3x3 filter, stride 1, padding 1, C in {32, 64, 128, 256}.
    pub fn conv_default() -> Self {
        Self {
            kind: LayerKind::Conv,
            c_list: vec![32, 64, 128, 256],
            sparsities: Sparsity::SWEEP.to_vec(),
            isa: IsaMode::Both,
            n_cores: DEFAULT_CORES,
            seed: 0,
            k: 256,
            spatial: 8,
            filter: 3,
            stride: 1,
            padding: 1,
            l1_budget: DEFAULT_L1_BUDGET,
        }
    }

    /// K=256, C in {256, 512, 1024, 2048}.
    pub fn fc_default() -> Self {
        Self { kind: LayerKind::Fc, c_list: vec![256, 512, 1024, 2048], ..Self::conv_default() }
    }

    pub fn default_for(kind: LayerKind) -> Self {
        match kind {
            LayerKind::Conv => Self::conv_default(),
            LayerKind::Fc => Self::fc_default(),
        }
    }

    pub fn geometry(&self, c: usize) -> Result<LayerGeometry, BenchError> {
        let g = match self.kind {
            LayerKind::Conv => {
                LayerGeometry::conv(self.spatial, self.spatial, c, self.k, self.filter, self.filter, self.padding, self.stride)
            }
            LayerKind::Fc => LayerGeometry::fc(c, self.k),
        };
        g.map_err(|e| BenchError::Invalid(e.to_string()))
    }

    fn dense_kernels(&self) -> &'static [KernelId] {
        match self.kind {
            LayerKind::Conv => &[KernelId::ConvDense1x2, KernelId::ConvDense4x2],
            LayerKind::Fc => &[KernelId::FcDense],
        }
    }

    /// `(c, sparsity, kernel)` in emission order.
    fn jobs(&self) -> Vec<(usize, Sparsity, KernelId)> {
        let mut jobs = Vec::new();
        for &c in &self.c_list {
            for &s in &self.sparsities {
                match s {
                    Sparsity::Dense => jobs.extend(self.dense_kernels().iter().map(|&k| (c, s, k))),
                    Sparsity::Nm(_) => jobs.extend(self.isa.choices().iter().map(|&isa| (c, s, sparse_kernel(self.kind, isa)))),
                }
            }
        }
        jobs
    }
}

/// One measured kernel. Column order is the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub kernel: KernelId,
    pub sparsity: Sparsity,
    pub m: usize,
    pub c: usize,
    pub k: usize,
    pub iy: usize,
    pub ix: usize,
    pub fy: usize,
    pub fx: usize,
    pub n_cores: usize,
    pub instr: u64,
    pub total_instr: u64,
    pub macs_effective: u64,
    pub macs_dense_equiv: u64,
    pub macs_per_instr: f64,
    pub macs_per_instr_core: f64,
    pub dense_equiv_per_instr_core: f64,
    pub peak_dense_equiv_per_instr: f64,
    pub baseline: KernelId,
    pub speedup: f64,
    pub alt_baseline: KernelId,
    pub alt_speedup: f64,
    pub weight_bytes: usize,
    pub tile_k: usize,
    pub n_tiles: usize,
    pub l1_bytes: usize,
}

pub const CSV_HEADER: &str = "kind,kernel,sparsity,m,c,k,iy,ix,fy,fx,n_cores,instr,total_instr,macs_effective,\
macs_dense_equiv,macs_per_instr,macs_per_instr_core,dense_equiv_per_instr_core,peak_dense_equiv_per_instr,\
baseline,speedup,alt_baseline,alt_speedup,weight_bytes,tile_k,n_tiles,l1_bytes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub kernel: KernelId,
    pub sparsity: Sparsity,
    pub c: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedRow>,
}

impl SweepResult {
    pub fn row(&self, kernel: KernelId, sparsity: Sparsity, c: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.kernel == kernel && r.sparsity == sparsity && r.c == c)
    }
}

fn weight_format(kernel: KernelId, sparsity: Sparsity) -> WeightFormat {
    match sparsity.pattern().filter(|_| kernel.is_sparse()) {
        Some(pattern) => WeightFormat::Sparse { pattern, layout: kernel_layout(kernel) },
        None => WeightFormat::Dense,
    }
}

enum JobResult {
    Done(Box<BenchOutcome>, TileConfig),
    Skipped(String),
}

fn run_one(cfg: &SweepConfig, c: usize, sparsity: Sparsity, kernel: KernelId, trace: bool) -> Result<JobResult, BenchError> {
    let g = cfg.geometry(c)?;
    let topts = TilerOptions { l1_budget: cfg.l1_budget, n_cores: cfg.n_cores, double_buffer: true };
    let tiles = match plan_tiles(&g, weight_format(kernel, sparsity), &topts) {
        Ok(t) => t,
        Err(e) => return Ok(JobResult::Skipped(e.to_string())),
    };
    if !tiles.fits(&g, &topts) {
        return Err(BenchError::Invariant(format!("{kernel} C={c}: tile plan exceeds the L1 budget on recomputation")));
    }
    let spec = BenchSpec { kernel, geometry: g, sparsity, n_cores: cfg.n_cores, seed: cfg.seed, repetitions: 1 };
    Ok(JobResult::Done(Box::new(run_bench(&spec, trace)?), tiles))
}

/// Traces of core 0, keyed by `(kernel, sparsity, c)`, when tracing was requested.
pub type SweepTraces = BTreeMap<(String, String, usize), String>;

/// Runs every kernel and sparsity of the sweep; rows keep configuration order.
pub fn sweep_single_layer(cfg: &SweepConfig) -> Result<SweepResult, BenchError> {
    sweep_traced(cfg, false).map(|(r, _)| r)
}

pub fn sweep_traced(cfg: &SweepConfig, trace: bool) -> Result<(SweepResult, SweepTraces), BenchError> {
    if cfg.n_cores == 0 {
        return Err(BenchError::Invalid("at least one core is required".into()));
    }
    let jobs = cfg.jobs();
    let baselines: Vec<(usize, KernelId)> = cfg
        .c_list
        .iter()
        .flat_map(|&c| cfg.dense_kernels().iter().map(move |&k| (c, k)))
        .collect();
    let results: Vec<Result<JobResult, BenchError>> =
        jobs.par_iter().map(|&(c, s, k)| run_one(cfg, c, s, k, trace)).collect();
    let base_instr: Vec<Result<Option<u64>, BenchError>> = baselines
        .par_iter()
        .map(|&(c, k)| {
            if let Some(i) = jobs.iter().position(|&j| j == (c, Sparsity::Dense, k)) {
                return Ok(match &results[i] {
                    Ok(JobResult::Done(o, _)) => Some(o.run.cost.instructions),
                    _ => None,
                });
            }
            match run_one(cfg, c, Sparsity::Dense, k, false)? {
                JobResult::Done(o, _) => Ok(Some(o.run.cost.instructions)),
                JobResult::Skipped(_) => Ok(None),
            }
        })
        .collect();
    let mut base = BTreeMap::new();
    for (&(c, k), r) in baselines.iter().zip(base_instr) {
        if let Some(i) = r? {
            base.insert((c, k), i);
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut traces = SweepTraces::new();
    for (&(c, sparsity, kernel), res) in jobs.iter().zip(results) {
        let (out, tiles) = match res? {
            JobResult::Done(o, t) => (o, t),
            JobResult::Skipped(reason) => {
                skipped.push(SkippedRow { kernel, sparsity, c, reason });
                continue;
            }
        };
        let primary = baseline_kernel(cfg.kind);
        let alt = *cfg.dense_kernels().last().expect("non-empty");
        let speed = |b: KernelId| match base.get(&(c, b)) {
            Some(&bi) => Ok(bi as f64 / out.run.cost.instructions as f64),
            None => Err(BenchError::Invalid(format!("baseline {b} infeasible at C={c}"))),
        };
        let (speedup, alt_speedup) = match (speed(primary), speed(alt)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                skipped.push(SkippedRow { kernel, sparsity, c, reason: e.to_string() });
                continue;
            }
        };
        let cost = &out.run.cost;
        let g = out.layer.geometry;
        let m = sparsity.m();
        if let Some(t) = &out.run.trace {
            traces.insert((kernel.to_string(), sparsity.to_string(), c), t.dump());
        }
        let peak = cost
            .inner_window
            .map(|w| w.macs_per_instruction() * if kernel.is_sparse() { m as f64 } else { 1.0 })
            .unwrap_or(0.0);
        rows.push(SweepRow {
            kind: kind_name(cfg.kind).into(),
            kernel,
            sparsity,
            m: if kernel.is_sparse() { m } else { 1 },
            c,
            k: g.k,
            iy: g.iy,
            ix: g.ix,
            fy: g.fy,
            fx: g.fx,
            n_cores: cost.n_cores,
            instr: cost.instructions,
            total_instr: cost.total_instructions,
            macs_effective: cost.macs_effective,
            macs_dense_equiv: cost.macs_dense_equiv,
            macs_per_instr: cost.macs_per_instruction,
            macs_per_instr_core: cost.macs_per_instruction_per_core,
            dense_equiv_per_instr_core: cost.dense_equiv_per_instruction_per_core(),
            peak_dense_equiv_per_instr: peak,
            baseline: primary,
            speedup,
            alt_baseline: alt,
            alt_speedup,
            weight_bytes: out.weight_bytes,
            tile_k: tiles.tile_k,
            n_tiles: tiles.n_tiles_k * tiles.n_tiles_oy * tiles.n_tiles_ox,
            l1_bytes: tiles.l1_bytes_used,
        });
    }
    Ok((SweepResult { config: cfg.clone(), rows, skipped }, traces))
}

pub fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv => "conv",
        LayerKind::Fc => "fc",
    }
}

/// Checks the harness's own invariants on a finished sweep; returns every violation.
pub fn check_sweep(result: &SweepResult) -> Vec<String> {
    let mut bad = Vec::new();
    for r in &result.rows {
        let label = format!("{} {} C={}", r.kernel, r.sparsity, r.c);
        if r.instr == 0 {
            bad.push(format!("{label}: no instructions"));
            continue;
        }
        let expected = r.macs_effective as f64 / r.instr as f64;
        if (r.macs_per_instr - expected).abs() > 1e-12 * expected.max(1.0) {
            bad.push(format!("{label}: macs_per_instr {} != {}", r.macs_per_instr, expected));
        }
        if r.macs_dense_equiv != r.macs_effective * r.m as u64 {
            bad.push(format!("{label}: dense-equivalent MACs inconsistent"));
        }
        if r.dense_equiv_per_instr_core >= r.peak_dense_equiv_per_instr {
            bad.push(format!(
                "{label}: whole-kernel {} not below inner-loop peak {}",
                r.dense_equiv_per_instr_core, r.peak_dense_equiv_per_instr
            ));
        }
        if r.l1_bytes > result.config.l1_budget {
            bad.push(format!("{label}: tile uses {} of {} L1 bytes", r.l1_bytes, result.config.l1_budget));
        }
    }
    bad
}
