use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nmsparse::geometry::{LayerGeometry, LayerKind, WeightShape};
use nmsparse::kernels::{KernelId, DEFAULT_CORES};
use nmsparse::sparse_format::{
    compress_nm, decompress_any, footprint_coo, footprint_csr, footprint_nm, read_weights, with_layout, write_weights,
    Layout, SparsityPattern,
};
use nmsparse::tiler::{layout_interleaved, plan_tiles, recognize_pattern, TilerOptions, WeightFormat, DEFAULT_L1_BUDGET};
use nmsparse_bench::gen::{random_conforming_dense, random_dense, rng};
use nmsparse_bench::network::{run_network, NetworkSpec};
use nmsparse_bench::report::{emit_report, Format};
use nmsparse_bench::runner::{run_bench, BenchSpec, Sparsity};
use nmsparse_bench::sweep::{check_sweep, sweep_traced, IsaMode, SweepConfig};
use nmsparse_bench::weights_io::{dense_from_json, dense_to_json};
use nmsparse_bench::BenchError;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// 1:M sparse int8 kernels on an emulated RISC-V cluster. Costs are instruction counts.
#[derive(Parser)]
#[command(name = "nmsparse", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kernel benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Weight-file operations.
    #[command(subcommand)]
    Fmt(FmtCmd),
    /// L1 tile plan (and, given weights, the L2 storage plan) as JSON.
    Plan(PlanArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Single-layer sweep over C and sparsity.
    Sweep(SweepArgs),
    /// One kernel on one generated layer.
    Run(RunArgs),
    /// A layer sequence from a JSON file.
    Net(NetArgs),
}

#[derive(Args)]
struct Output {
    /// csv, json or md.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Output {
    fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
            None => Ok(std::io::stdout().write_all(bytes)?),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// conv or fc.
    #[arg(long, default_value = "conv")]
    kind: String,
    /// Comma-separated list of dense, 1:4, 1:8, 1:16.
    #[arg(long, value_delimiter = ',', default_value = "dense,1:4,1:8,1:16")]
    sparsity: Vec<String>,
    /// on, off or both.
    #[arg(long, default_value = "both")]
    isa_ext: String,
    #[arg(long, default_value_t = DEFAULT_CORES)]
    cores: usize,
    /// Input channels; defaults to 32,64,128,256 (conv) or 256,512,1024,2048 (fc).
    #[arg(long, value_delimiter = ',')]
    c_list: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_L1_BUDGET)]
    l1_budget: usize,
    /// Dump core 0's instruction trace of every row into --trace-dir.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value = "traces")]
    trace_dir: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    kernel: KernelId,
    #[arg(long, default_value = "1:8")]
    sparsity: String,
    #[arg(long, default_value_t = 64)]
    c: usize,
    #[arg(long, default_value_t = 64)]
    k: usize,
    /// Input rows and columns (conv).
    #[arg(long, default_value_t = 8)]
    spatial: usize,
    /// Filter rows and columns (conv).
    #[arg(long, default_value_t = 3)]
    filter: usize,
    #[arg(long, default_value_t = DEFAULT_CORES)]
    cores: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write core 0's instruction trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct NetArgs {
    /// Network description (JSON).
    #[arg(long)]
    layers: PathBuf,
    /// Override the network-wide sparsity.
    #[arg(long)]
    sparsity: Option<String>,
    /// Override the extension setting: on or off.
    #[arg(long)]
    isa_ext: Option<String>,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Subcommand)]
enum FmtCmd {
    /// Random dense tensor (JSON), optionally already 1:M conforming.
    Gen {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value = "dense")]
        sparsity: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compress a dense JSON tensor into an NMSW file.
    Pack {
        #[arg(long, short)]
        input: PathBuf,
        /// 1:4, 1:8, 1:16, or auto to use the tightest pattern the tensor satisfies.
        #[arg(long, default_value = "auto")]
        sparsity: String,
        /// plain, replicated or interleaved.
        #[arg(long, default_value = "plain")]
        layout: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Expand an NMSW file back into a dense JSON tensor.
    Unpack {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Memory footprint of 1:M, COO and CSR storage for a shape or an NMSW file.
    Footprint {
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[command(flatten)]
        shape: ShapeArgs,
        /// Index width for COO and CSR.
        #[arg(long, default_value_t = 16)]
        index_bits: u32,
    },
}

#[derive(Args)]
struct ShapeArgs {
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    fx: usize,
    #[arg(long, default_value_t = 3)]
    fy: usize,
    #[arg(long, default_value_t = 64)]
    c: usize,
}

impl ShapeArgs {
    fn shape(&self) -> WeightShape {
        WeightShape { k: self.k, fx: self.fx, fy: self.fy, c: self.c }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value = "conv")]
    kind: String,
    #[arg(long, default_value_t = 64)]
    c: usize,
    #[arg(long, default_value_t = 256)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    spatial: usize,
    #[arg(long, default_value_t = 3)]
    filter: usize,
    #[arg(long, default_value = "dense")]
    sparsity: String,
    #[arg(long, default_value = "plain")]
    layout: String,
    #[arg(long, default_value_t = DEFAULT_L1_BUDGET)]
    l1_budget: usize,
    #[arg(long, default_value_t = DEFAULT_CORES)]
    cores: usize,
    /// Count tile buffers once instead of twice.
    #[arg(long)]
    single_buffer: bool,
    /// NMSW weights to lay out per K-tile; written next to the plan as <out>.bin.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<LayerKind> {
    match s {
        "conv" => Ok(LayerKind::Conv),
        "fc" => Ok(LayerKind::Fc),
        _ => bail!("kind must be conv or fc, got '{s}'"),
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let kind = parse_kind(&a.kind)?;
    let mut cfg = SweepConfig::default_for(kind);
    cfg.sparsities = a.sparsity.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    cfg.isa = a.isa_ext.parse()?;
    cfg.n_cores = a.cores;
    cfg.k = a.k;
    cfg.seed = a.seed;
    cfg.l1_budget = a.l1_budget;
    if !a.c_list.is_empty() {
        cfg.c_list = a.c_list;
    }
    let (result, traces) = sweep_traced(&cfg, a.trace)?;
    for s in &result.skipped {
        eprintln!("skipped {} {} C={}: {}", s.kernel, s.sparsity, s.c, s.reason);
    }
    if a.trace {
        std::fs::create_dir_all(&a.trace_dir)?;
        for ((kernel, sparsity, c), text) in &traces {
            let name = format!("{kernel}_{}_c{c}.trace", sparsity.replace(':', "of"));
            std::fs::write(a.trace_dir.join(name), text)?;
        }
    }
    a.output.write(&emit_report(&result, a.output.format.parse::<Format>()?)?)?;
    let bad = check_sweep(&result);
    if !bad.is_empty() {
        return Err(BenchError::Invariant(bad.join("; ")).into());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let sparsity: Sparsity = a.sparsity.parse()?;
    let g = match a.kernel.kind() {
        LayerKind::Conv => LayerGeometry::conv(a.spatial, a.spatial, a.c, a.k, a.filter, a.filter, a.filter / 2, 1)?,
        LayerKind::Fc => LayerGeometry::fc(a.c, a.k)?,
    };
    let spec = BenchSpec { kernel: a.kernel, geometry: g, sparsity, n_cores: a.cores, seed: a.seed, repetitions: 1 };
    let out = run_bench(&spec, a.trace.is_some())?;
    if let (Some(p), Some(t)) = (&a.trace, &out.run.trace) {
        std::fs::write(p, t.dump())?;
    }
    let mut v = serde_json::to_vec_pretty(&out.run.cost)?;
    v.push(b'\n');
    std::io::stdout().write_all(&v)?;
    Ok(())
}

fn net(a: NetArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.layers).with_context(|| format!("reading {}", a.layers.display()))?;
    let mut spec = NetworkSpec::from_json(&text)?;
    if let Some(s) = a.sparsity {
        spec.sparsity = s.parse()?;
    }
    if let Some(i) = a.isa_ext {
        spec.isa = match i.parse::<IsaMode>()? {
            IsaMode::On => true,
            IsaMode::Off => false,
            IsaMode::Both => bail!("a network runs with the extension on or off"),
        };
    }
    if let Some(c) = a.cores {
        spec.n_cores = c;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let report = run_network(&spec)?;
    a.output.write(&emit_report(&report, a.output.format.parse::<Format>()?)?)
}

fn fmt_cmd(c: FmtCmd) -> Result<()> {
    match c {
        FmtCmd::Gen { shape, sparsity, seed, out } => {
            let mut r = rng(seed);
            let w = match sparsity.parse::<Sparsity>()? {
                Sparsity::Dense => random_dense(&mut r, shape.shape()),
                Sparsity::Nm(p) => random_conforming_dense(&mut r, shape.shape(), p),
            };
            std::fs::write(out, dense_to_json(&w)?)?;
        }
        FmtCmd::Pack { input, sparsity, layout, out } => {
            let dense = dense_from_json(&std::fs::read(&input)?)?;
            let pattern = if sparsity == "auto" {
                recognize_pattern(&dense).context("tensor does not satisfy 1:4, 1:8 or 1:16")?
            } else {
                sparsity.parse::<SparsityPattern>()?
            };
            let w = with_layout(&compress_nm(&dense, pattern)?, layout.parse::<Layout>()?)?;
            std::fs::write(&out, write_weights(&w)?)?;
            eprintln!("packed {} as {} {:?}", input.display(), pattern, w.layout());
        }
        FmtCmd::Unpack { input, out } => {
            let w = read_weights(&std::fs::read(input)?)?;
            std::fs::write(out, dense_to_json(&decompress_any(&w))?)?;
        }
        FmtCmd::Footprint { input, shape, index_bits } => {
            let (shape, patterns, layouts) = match input {
                Some(p) => {
                    let w = read_weights(&std::fs::read(p)?)?;
                    (w.shape(), vec![w.pattern()], vec![w.layout()])
                }
                None => (shape.shape(), SparsityPattern::ALL.to_vec(), vec![Layout::Plain, Layout::ReplicatedConv]),
            };
            println!("format,sparsity,total_bytes,reduction");
            println!("dense,0,{},0", shape.len());
            for p in &patterns {
                for l in &layouts {
                    let f = footprint_nm(&shape, *p, *l);
                    println!("{p} {l:?},{},{},{}", 1.0 - 1.0 / p.m() as f64, f.total_bytes(), f.reduction);
                }
                let s = 1.0 - 1.0 / p.m() as f64;
                let coo = footprint_coo(&shape, s, index_bits);
                let csr = footprint_csr(&shape, s, index_bits);
                println!("coo,{s},{},{}", coo.total_bytes(), coo.reduction);
                println!("csr,{s},{},{}", csr.total_bytes(), csr.reduction);
            }
        }
    }
    Ok(())
}

fn plan(a: PlanArgs) -> Result<()> {
    let kind = parse_kind(&a.kind)?;
    let g = match kind {
        LayerKind::Conv => LayerGeometry::conv(a.spatial, a.spatial, a.c, a.k, a.filter, a.filter, a.filter / 2, 1)?,
        LayerKind::Fc => LayerGeometry::fc(a.c, a.k)?,
    };
    let format = match a.sparsity.parse::<Sparsity>()? {
        Sparsity::Dense => WeightFormat::Dense,
        Sparsity::Nm(pattern) => WeightFormat::Sparse { pattern, layout: a.layout.parse()? },
    };
    let opts = TilerOptions { l1_budget: a.l1_budget, n_cores: a.cores, double_buffer: !a.single_buffer };
    let tiles = plan_tiles(&g, format, &opts)?;
    let mut doc = serde_json::json!({ "geometry": g, "options": opts, "tiles": tiles });
    if let Some(wp) = &a.weights {
        let w = read_weights(&std::fs::read(wp)?)?;
        let (storage, image) = layout_interleaved(&w, &tiles)?;
        doc["storage"] = serde_json::to_value(&storage)?;
        if let Some(o) = &a.out {
            std::fs::write(o.with_extension("bin"), image)?;
        }
    }
    let mut text = serde_json::to_vec_pretty(&doc)?;
    text.push(b'\n');
    match a.out {
        Some(o) => std::fs::write(o, text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Bench(BenchCmd::Sweep(a)) => sweep(a),
        Cmd::Bench(BenchCmd::Run(a)) => run(a),
        Cmd::Bench(BenchCmd::Net(a)) => net(a),
        Cmd::Fmt(c) => fmt_cmd(c),
        Cmd::Plan(a) => plan(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<BenchError>() {
                Some(BenchError::Invariant(_)) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
