//! int8 convolution and fully-connected kernels, dense and 1:M sparse,
//! generated as emulator traces.
//!
//! Every kernel builds an L1 memory image (input, weights, bias, im2col
//! buffers, output), splits the work across cores, and runs each core's
//! instruction stream through the emulator. Outputs are read back from
//! emulated memory, so they are exactly what the instruction stream computed.

mod asm;
mod conv;
mod fc;
mod im2col;
mod quant;
mod reference;

pub use asm::{INNER_BEGIN, INNER_END};
pub use conv::{conv_dense_1x2, conv_dense_4x2, conv_sparse_isa, conv_sparse_sw};
pub use fc::{fc_dense, fc_sparse_isa, fc_sparse_sw, prepare_fc_isa};
pub use im2col::{im2col_l1_bytes, im2col_partial, Im2colBuffer};
pub use quant::QuantParams;
pub use reference::{conv_reference, fc_reference};

use crate::geometry::{GeometryError, LayerGeometry, LayerKind, Tensor};
use crate::isa_emu::{CoreState, EmuError, Opcode, TraceSink};
use crate::sparse_format::FormatError;
use asm::Asm;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_CORES: usize = 8;

/// Slack after buffers that kernels may read past. Reads there always meet a
/// zero weight (padding blocks or padded row tails), so their value is irrelevant.
const GUARD: usize = 64;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("emulation failed: {0}")]
    Emu(#[from] EmuError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("n_cores must be at least 1")]
    NoCores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelId {
    #[serde(rename = "conv-dense-4x2")]
    ConvDense4x2,
    #[serde(rename = "conv-dense-1x2")]
    ConvDense1x2,
    ConvSparseSw,
    ConvSparseIsa,
    FcDense,
    FcSparseSw,
    FcSparseIsa,
}

impl KernelId {
    pub const ALL: [KernelId; 7] = [
        KernelId::ConvDense4x2,
        KernelId::ConvDense1x2,
        KernelId::ConvSparseSw,
        KernelId::ConvSparseIsa,
        KernelId::FcDense,
        KernelId::FcSparseSw,
        KernelId::FcSparseIsa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::ConvDense4x2 => "conv-dense-4x2",
            KernelId::ConvDense1x2 => "conv-dense-1x2",
            KernelId::ConvSparseSw => "conv-sparse-sw",
            KernelId::ConvSparseIsa => "conv-sparse-isa",
            KernelId::FcDense => "fc-dense",
            KernelId::FcSparseSw => "fc-sparse-sw",
            KernelId::FcSparseIsa => "fc-sparse-isa",
        }
    }

    pub fn kind(self) -> LayerKind {
        match self {
            KernelId::ConvDense4x2 | KernelId::ConvDense1x2 | KernelId::ConvSparseSw | KernelId::ConvSparseIsa => {
                LayerKind::Conv
            }
            _ => LayerKind::Fc,
        }
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, KernelId::ConvSparseSw | KernelId::ConvSparseIsa | KernelId::FcSparseSw | KernelId::FcSparseIsa)
    }

    pub fn uses_isa_extension(self) -> bool {
        matches!(self, KernelId::ConvSparseIsa | KernelId::FcSparseIsa)
    }

    /// Work granule of the parallel split: output pixels for conv, channels for FC.
    fn granule(self) -> usize {
        match self {
            KernelId::FcDense | KernelId::FcSparseIsa => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelId::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown kernel `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub n_cores: usize,
    /// Record core 0's execution trace.
    pub trace: bool,
    /// Cap on recorded trace entries.
    pub trace_limit: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { n_cores: DEFAULT_CORES, trace: false, trace_limit: Some(1 << 20) }
    }
}

impl RunOptions {
    pub fn cores(n_cores: usize) -> Self {
        Self { n_cores, ..Self::default() }
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }
}

/// Instructions and MACs of one steady-state inner-loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerWindow {
    pub instructions: u64,
    pub macs: u64,
}

impl InnerWindow {
    pub fn macs_per_instruction(&self) -> f64 {
        self.macs as f64 / self.instructions as f64
    }
}

/// Contiguous share of the work given to one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkSplit {
    pub core_id: usize,
    /// Output pixels (conv, row-major `oy * ox + x`) or output channels (FC).
    pub start: usize,
    pub end: usize,
}

impl WorkSplit {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Contiguous split of output rows (conv) or output channels (FC) over `n_cores`.
pub fn parallelize(kernel: KernelId, g: &LayerGeometry, n_cores: usize) -> Result<Vec<WorkSplit>, KernelError> {
    if n_cores == 0 {
        return Err(KernelError::NoCores);
    }
    let total = match kernel.kind() {
        LayerKind::Conv => g.output_pixels(),
        LayerKind::Fc if kernel == KernelId::FcSparseIsa => g.k.next_multiple_of(2),
        LayerKind::Fc => g.k,
    };
    let gran = kernel.granule();
    let chunk = total.div_ceil(n_cores).next_multiple_of(gran);
    Ok((0..n_cores)
        .map(|core_id| {
            let start = (core_id * chunk).min(total);
            WorkSplit { core_id, start, end: ((core_id + 1) * chunk).min(total) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreCost {
    pub core_id: usize,
    pub instructions: u64,
    pub work_start: usize,
    pub work_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub kernel: KernelId,
    /// Block size of the sparsity pattern, 1 for dense kernels.
    pub m: usize,
    pub n_cores: usize,
    /// Instructions of the most loaded core.
    pub instructions: u64,
    pub total_instructions: u64,
    pub macs_effective: u64,
    pub macs_dense_equiv: u64,
    /// `macs_effective / instructions`, cluster-wide.
    pub macs_per_instruction: f64,
    /// `macs_per_instruction / n_cores`, comparable with inner-window peaks.
    pub macs_per_instruction_per_core: f64,
    pub per_core: Vec<CoreCost>,
    pub inner_window: Option<InnerWindow>,
    pub im2col_l1_bytes: usize,
    pub opcode_counts: BTreeMap<String, u64>,
}

impl CostReport {
    pub fn dense_equiv_per_instruction_per_core(&self) -> f64 {
        self.macs_per_instruction_per_core * self.m as f64
    }

    pub fn xdecimate_clears(&self) -> u64 {
        self.opcode_counts.get(&Opcode::XDecimateClear.to_string()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct KernelRun {
    pub output: Tensor,
    pub cost: CostReport,
    pub trace: Option<TraceSink>,
}

// ---------------------------------------------------------------------------
// Shared driver
// ---------------------------------------------------------------------------

/// Bump allocator for the L1 image.
#[derive(Debug, Default)]
pub(crate) struct MemMap {
    next: usize,
}

impl MemMap {
    pub fn alloc(&mut self, len: usize) -> usize {
        let at = self.next.next_multiple_of(4);
        self.next = at + len;
        at
    }

    pub fn size(&self) -> usize {
        self.next.next_multiple_of(4)
    }
}

pub(crate) fn bytes_of(v: &[i8]) -> Vec<u8> {
    v.iter().map(|&b| b as u8).collect()
}

pub(crate) fn bias_bytes(q: &QuantParams, k: usize) -> Vec<u8> {
    (0..k).flat_map(|ch| q.bias_of(ch).to_le_bytes()).collect()
}

pub(crate) fn check_quant(q: &QuantParams, k: usize) -> Result<(), KernelError> {
    if q.shift > 31 {
        return Err(KernelError::Shape(format!("shift {} outside [0, 31]", q.shift)));
    }
    match &q.bias {
        Some(b) if b.len() != k => Err(KernelError::Shape(format!("{} biases for {k} output channels", b.len()))),
        _ => Ok(()),
    }
}

/// Emits the output stage for accumulator `acc` and stores the byte at `out` (post-incremented).
pub(crate) fn emit_requant(asm: &mut Asm, q: &QuantParams, acc: u8, out: u8) {
    if let Some(r) = q.rounding() {
        asm.addi(acc, acc, r);
        asm.srai(acc, acc, q.shift);
    }
    asm.clip8(acc, acc);
    asm.sb(acc, asm::post(out, 1));
}

pub(crate) struct Job<'a> {
    pub kernel: KernelId,
    pub m: usize,
    pub g: &'a LayerGeometry,
    pub mem: Vec<u8>,
    pub out_base: usize,
    /// Bytes per unit of work in the output region.
    pub out_stride: usize,
    pub out_len: usize,
    pub macs_effective: u64,
    pub im2col_per_core: usize,
}

/// Runs `body` on every core's split and assembles output and cost.
pub(crate) fn run_job<F>(job: Job, opts: &RunOptions, body: F) -> Result<KernelRun, KernelError>
where
    F: Fn(&mut Asm, &WorkSplit) + Sync,
{
    let splits = parallelize(job.kernel, job.g, opts.n_cores)?;
    let cores: Vec<(CoreState, Option<InnerWindow>)> = splits
        .par_iter()
        .map(|s| {
            let mut core = CoreState::with_memory(s.core_id, job.mem.clone());
            if opts.trace && s.core_id == 0 {
                core.enable_trace(opts.trace_limit);
            }
            let mut asm = Asm::new(&mut core);
            if !s.is_empty() {
                body(&mut asm, s);
            }
            let window = asm.finish()?;
            Ok((core, window))
        })
        .collect::<Result<_, EmuError>>()?;

    let mut out = vec![0i8; job.out_len];
    let mut opcode_counts = BTreeMap::new();
    for ((core, _), s) in cores.iter().zip(&splits) {
        let (a, b) = (s.start * job.out_stride, (s.end * job.out_stride).min(job.out_len));
        if a < b {
            let src = &core.mem()[job.out_base + a..job.out_base + b];
            for (d, &v) in out[a..b].iter_mut().zip(src) {
                *d = v as i8;
            }
        }
        for (op, n) in core.op_counts() {
            if n > 0 {
                *opcode_counts.entry(op.to_string()).or_insert(0) += n;
            }
        }
    }
    let per_core: Vec<CoreCost> = cores
        .iter()
        .zip(&splits)
        .map(|((c, _), s)| CoreCost { core_id: s.core_id, instructions: c.icount(), work_start: s.start, work_end: s.end })
        .collect();
    let instructions = per_core.iter().map(|c| c.instructions).max().unwrap_or(0);
    let total_instructions = per_core.iter().map(|c| c.instructions).sum();
    let inner_window = cores.iter().find_map(|(_, w)| *w);
    let trace = cores.into_iter().next().and_then(|(mut c, _)| c.take_trace());
    let g = job.g;
    let output = match g.kind {
        LayerKind::Conv => Tensor { h: g.oy, w: g.ox, c: g.k, data: out },
        LayerKind::Fc => Tensor::vector(out[..g.k].to_vec()),
    };
    let n_cores = opts.n_cores;
    let cost = CostReport {
        kernel: job.kernel,
        m: job.m,
        n_cores,
        instructions,
        total_instructions,
        macs_effective: job.macs_effective,
        macs_dense_equiv: job.macs_effective * job.m as u64,
        macs_per_instruction: ratio(job.macs_effective, instructions),
        macs_per_instruction_per_core: ratio(job.macs_effective, instructions) / n_cores as f64,
        per_core,
        inner_window,
        im2col_l1_bytes: job.im2col_per_core * n_cores,
        opcode_counts,
    };
    Ok(KernelRun { output, cost, trace })
}

fn ratio(macs: u64, instructions: u64) -> f64 {
    if instructions == 0 {
        0.0
    } else {
        macs as f64 / instructions as f64
    }
}

pub(crate) fn check_input(input: &Tensor, g: &LayerGeometry, kind: LayerKind) -> Result<(), KernelError> {
    g.validate()?;
    if g.kind != kind {
        return Err(KernelError::Shape(format!("{:?} kernel given a {:?} geometry", kind, g.kind)));
    }
    if !input.matches_input(g) {
        return Err(KernelError::Shape(format!(
            "input {}x{}x{} does not match geometry {}x{}x{}",
            input.h, input.w, input.c, g.iy, g.ix, g.c
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_split_is_by_rows() {
        let g = LayerGeometry::conv(8, 8, 4, 4, 3, 3, 1, 1).unwrap();
        let s = parallelize(KernelId::ConvDense1x2, &g, 8).unwrap();
        assert!(s.iter().all(|w| w.len() == 8 && w.start % 8 == 0));
        let one = parallelize(KernelId::ConvDense1x2, &g, 1).unwrap();
        assert_eq!((one[0].start, one[0].end), (0, 64));
        assert!(parallelize(KernelId::ConvDense1x2, &g, 0).is_err());
    }

    #[test]
    fn fc_split_keeps_pairs() {
        let g = LayerGeometry::fc(16, 7).unwrap();
        let s = parallelize(KernelId::FcSparseIsa, &g, 3).unwrap();
        assert!(s.iter().all(|w| w.start % 2 == 0));
        assert_eq!(s.last().unwrap().end, 8);
        let s = parallelize(KernelId::FcSparseSw, &g, 3).unwrap();
        assert_eq!(s.iter().map(WorkSplit::len).collect::<Vec<_>>(), [3, 3, 1]);
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in KernelId::ALL {
            assert_eq!(k.name().parse::<KernelId>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }
}
