//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p nmsparse-bench --test acceptance -- --nocapture`
//! to see the report. Checks that cannot be met are listed in `KNOWN_RED`;
//! they still print FAIL, and the test fails if any other check fails or if a
//! listed one unexpectedly passes.

use nmsparse::geometry::{LayerGeometry, LayerKind, Tensor, WeightShape};
use nmsparse::isa_emu::{Addr, CoreState, Decimate, Instr, Opcode, ShiftOp};
use nmsparse::kernels::{
    conv_dense_1x2, conv_dense_4x2, conv_reference, conv_sparse_isa, conv_sparse_sw, fc_dense, fc_reference,
    fc_sparse_isa, fc_sparse_sw, prepare_fc_isa, KernelId, KernelRun, QuantParams, RunOptions, INNER_BEGIN, INNER_END,
};
use nmsparse::sparse_format::{
    compress_nm, decompress_nm, footprint_coo, footprint_csr, footprint_nm, pad_channels_even, with_layout,
    Layout, SparsityPattern,
};
use nmsparse::tiler::{layout_interleaved, plan_tiles, read_back, TileConfig, TilerOptions, WeightFormat};
use nmsparse_bench::gen::{derive_seed, random_conforming_dense, random_dense, random_sparse, rng, BenchRng};
use nmsparse_bench::runner::Sparsity;
use nmsparse_bench::sweep::{sweep_single_layer, SweepConfig, SweepResult};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::process::Command;

/// `(criterion, check)` pairs that fail by construction; see the project notes.
const KNOWN_RED: &[(u32, &str)] = &[
    (2, "conv-sparse-sw 1:4 dense-equivalent peak"),
    (2, "fc-sparse-sw 1:4 dense-equivalent peak"),
    (3, "COO break-even sparsity with 16-bit indices"),
];

struct Check {
    name: String,
    ok: bool,
    detail: String,
}

struct Criterion {
    id: u32,
    title: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(id: u32, title: &'static str) -> Self {
        Self { id, title, checks: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), ok, detail: detail.into() });
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 0.01 + 1e-9
}

/// Two-decimal truncation, the precision the published ratios are quoted at.
fn trunc2(x: f64) -> f64 {
    (x * 100.0 + 1e-9).floor() / 100.0
}

// ---------------------------------------------------------------------------
// 1 and 2: inner-loop windows
// ---------------------------------------------------------------------------

struct Window {
    instructions: u64,
    macs: u64,
}

fn window_of(run: &KernelRun) -> Window {
    let trace = run.trace.as_ref().expect("traced run");
    let w = trace.window(INNER_BEGIN, INNER_END).expect("inner-loop markers in trace");
    let sdotp = w.iter().filter(|i| i.opcode() == Opcode::Sdotp4).count() as u64;
    let win = Window { instructions: w.len() as u64, macs: 4 * sdotp };
    let reported = run.cost.inner_window.expect("reported window");
    assert_eq!((reported.instructions, reported.macs), (win.instructions, win.macs), "trace and report disagree");
    win
}

fn traced_windows() -> Vec<(KernelId, usize, Window)> {
    let opts = RunOptions::cores(1).traced();
    let g = LayerGeometry::conv(6, 6, 16, 8, 3, 3, 1, 1).unwrap();
    let fcg = LayerGeometry::fc(256, 8).unwrap();
    let q = QuantParams::shift(8);
    let mut r = rng(1);
    let input = Tensor::new(6, 6, 16, (0..576).map(|_| r.gen()).collect()).unwrap();
    let fc_in = Tensor::vector((0..256).map(|_| r.gen()).collect());
    let dense = random_dense(&mut r, g.weight_shape());
    let fc_dense_w = random_dense(&mut r, fcg.weight_shape());
    let mut out = vec![
        (KernelId::ConvDense4x2, 1, window_of(&conv_dense_4x2(&input, &dense, &g, &q, &opts).unwrap())),
        (KernelId::ConvDense1x2, 1, window_of(&conv_dense_1x2(&input, &dense, &g, &q, &opts).unwrap())),
        (KernelId::FcDense, 1, window_of(&fc_dense(&fc_in, &fc_dense_w, &fcg, &q, &opts).unwrap())),
    ];
    for p in SparsityPattern::ALL {
        let w = random_sparse(&mut r, g.weight_shape(), p);
        let rep = with_layout(&w, Layout::ReplicatedConv).unwrap();
        out.push((KernelId::ConvSparseSw, p.m(), window_of(&conv_sparse_sw(&input, &w, &g, &q, &opts).unwrap())));
        out.push((KernelId::ConvSparseIsa, p.m(), window_of(&conv_sparse_isa(&input, &rep, &g, &q, &opts).unwrap())));
        let fw = random_sparse(&mut r, fcg.weight_shape(), p);
        let fi = prepare_fc_isa(&fw).unwrap();
        out.push((KernelId::FcSparseSw, p.m(), window_of(&fc_sparse_sw(&fc_in, &fw, &fcg, &q, &opts).unwrap())));
        out.push((KernelId::FcSparseIsa, p.m(), window_of(&fc_sparse_isa(&fc_in, &fi, &fcg, &q, &opts).unwrap())));
    }
    out
}

fn find(ws: &[(KernelId, usize, Window)], k: KernelId, m: usize) -> &Window {
    &ws.iter().find(|(kk, mm, _)| *kk == k && *mm == m).unwrap().2
}

fn criterion_1(ws: &[(KernelId, usize, Window)]) -> Criterion {
    let mut c = Criterion::new(1, "inner-loop instruction counts from traces");
    let expect = [
        (KernelId::ConvDense4x2, 1, 14, 32),
        (KernelId::ConvSparseSw, 4, 23, 8),
        (KernelId::ConvSparseSw, 8, 22, 8),
        (KernelId::ConvSparseSw, 16, 22, 8),
        (KernelId::ConvSparseIsa, 4, 12, 8),
        (KernelId::ConvSparseIsa, 8, 12, 8),
        (KernelId::ConvSparseIsa, 16, 12, 8),
    ];
    for (k, m, instr, macs) in expect {
        let w = find(ws, k, m);
        c.check(
            format!("{k} m={m} window"),
            w.instructions == instr && w.macs == macs,
            format!("{}/{} (expected {instr}/{macs})", w.instructions, w.macs),
        );
    }
    let ratios = [
        (KernelId::ConvDense4x2, 1, 2.28),
        (KernelId::ConvSparseSw, 8, 0.36),
        (KernelId::ConvSparseSw, 4, 0.35),
        (KernelId::ConvSparseIsa, 8, 0.66),
    ];
    for (k, m, want) in ratios {
        let w = find(ws, k, m);
        let r = w.macs as f64 / w.instructions as f64;
        c.check(format!("{k} m={m} ratio"), close(r, want), format!("{r:.4} vs {want}"));
    }
    c
}

fn criterion_2(ws: &[(KernelId, usize, Window)]) -> Criterion {
    let mut c = Criterion::new(2, "peak dense-equivalent MACs/instruction");
    let table: [(KernelId, [f64; 3]); 4] = [
        (KernelId::ConvSparseSw, [1.4, 2.88, 5.76]),
        (KernelId::ConvSparseIsa, [2.64, 5.28, 10.56]),
        (KernelId::FcSparseSw, [1.0, 2.0, 4.0]),
        (KernelId::FcSparseIsa, [2.44, 4.88, 9.76]),
    ];
    for (k, wants) in table {
        for (m, want) in [4, 8, 16].into_iter().zip(wants) {
            let w = find(ws, k, m);
            let eff = w.macs as f64 / w.instructions as f64;
            let got = m as f64 * trunc2(eff);
            c.check(
                format!("{k} 1:{m} dense-equivalent peak"),
                close(got, want),
                format!("{m} x {:.2} = {got:.2} (exact {:.4}, {}/{}) vs {want}", trunc2(eff), m as f64 * eff, w.macs, w.instructions),
            );
        }
    }
    let w = find(ws, KernelId::FcDense, 1);
    let got = trunc2(w.macs as f64 / w.instructions as f64);
    c.check("fc-dense peak", close(got, 1.6), format!("{got:.2} ({}/{}) vs 1.6", w.macs, w.instructions));
    c
}

// ---------------------------------------------------------------------------
// 3: memory arithmetic
// ---------------------------------------------------------------------------

fn criterion_3() -> Criterion {
    let mut c = Criterion::new(3, "memory reductions");
    let shape = WeightShape { k: 64, fx: 3, fy: 3, c: 64 };
    for (layout, wants) in [(Layout::Plain, [0.6875, 0.8125, 0.90625]), (Layout::ReplicatedConv, [0.625, 0.75, 0.875])] {
        for (p, want) in SparsityPattern::ALL.into_iter().zip(wants) {
            let r = footprint_nm(&shape, p, layout).reduction;
            c.check(format!("{layout:?} {p}"), r == want, format!("{r} vs {want}"));
        }
    }
    // Break-even: the lowest sparsity (in 1/1000 steps) at which COO is no larger than dense.
    let big = WeightShape { k: 1000, fx: 1, fy: 1, c: 1000 };
    let even = (0..=1000).map(|i| i as f64 / 1000.0).find(|&s| footprint_coo(&big, s, 16).reduction >= 0.0).unwrap();
    c.check(
        "COO break-even sparsity with 16-bit indices",
        (even - 0.75).abs() < 1e-9,
        format!("{even} vs 0.75 (reduction at 0.75: {})", footprint_coo(&big, 0.75, 16).reduction),
    );
    let layer = WeightShape { k: 512, fx: 3, fy: 3, c: 512 };
    let csr = footprint_csr(&layer, 0.75, 16).reduction;
    c.check("CSR at 75% sparsity, K=512, 4608-long rows", csr < 0.25, format!("{csr:.5} < 0.25"));
    c
}

// ---------------------------------------------------------------------------
// 4: functional equivalence
// ---------------------------------------------------------------------------

fn random_quant(r: &mut BenchRng, k: usize) -> QuantParams {
    let q = QuantParams::shift(r.gen_range(0..=14));
    if r.gen_bool(0.7) {
        q.with_bias((0..k).map(|_| r.gen_range(-20000..=20000)).collect())
    } else {
        q
    }
}

fn random_conv(r: &mut BenchRng) -> LayerGeometry {
    loop {
        let fx = r.gen_range(1..=4);
        let fy = r.gen_range(1..=4);
        let s = r.gen_range(1..=2);
        let p = r.gen_range(0..=fx.min(fy) / 2);
        let ix = r.gen_range(fx.max(1)..=9);
        let iy = r.gen_range(fy.max(1)..=9);
        let c = r.gen_range(1..=32);
        let k = r.gen_range(1..=12);
        if let Ok(g) = LayerGeometry::conv(ix, iy, c, k, fx, fy, p, s) {
            return g;
        }
    }
}

/// Returns the number of sparse-kernel cases run, or the first mismatch.
fn equivalence_case(i: u64) -> Result<u32, String> {
    let mut r = rng(derive_seed(4, &[i]));
    let p = SparsityPattern::ALL[r.gen_range(0..3)];
    let opts = RunOptions::cores(r.gen_range(1..=8));
    let fail = |what: &str, g: &LayerGeometry| format!("case {i}: {what} differs, {p}, {g:?}");
    if i % 3 == 2 {
        let g = LayerGeometry::fc(r.gen_range(1..=256), r.gen_range(1..=32)).unwrap();
        let q = random_quant(&mut r, g.k);
        let input = Tensor::vector((0..g.c).map(|_| r.gen()).collect());
        let w = compress_nm(&random_conforming_dense(&mut r, g.weight_shape(), p), p).unwrap();
        let dense = decompress_nm(&w).unwrap();
        let base = fc_dense(&input, &dense, &g, &q, &opts).unwrap().output;
        if base != fc_reference(&input, &dense, &q) {
            return Err(fail("fc-dense vs oracle", &g));
        }
        if fc_sparse_sw(&input, &w, &g, &q, &opts).unwrap().output != base {
            return Err(fail("fc-sparse-sw", &g));
        }
        if fc_sparse_isa(&input, &prepare_fc_isa(&w).unwrap(), &g, &q, &opts).unwrap().output != base {
            return Err(fail("fc-sparse-isa", &g));
        }
        return Ok(2);
    }
    let g = random_conv(&mut r);
    let q = random_quant(&mut r, g.k);
    let input = Tensor::new(g.iy, g.ix, g.c, (0..g.input_len()).map(|_| r.gen()).collect()).unwrap();
    let w = compress_nm(&random_conforming_dense(&mut r, g.weight_shape(), p), p).unwrap();
    let dense = decompress_nm(&w).unwrap();
    let base = conv_dense_1x2(&input, &dense, &g, &q, &opts).unwrap().output;
    if conv_sparse_sw(&input, &w, &g, &q, &opts).unwrap().output != base {
        return Err(fail("conv-sparse-sw", &g));
    }
    let rep = with_layout(&w, Layout::ReplicatedConv).unwrap();
    if conv_sparse_isa(&input, &rep, &g, &q, &opts).unwrap().output != base {
        return Err(fail("conv-sparse-isa", &g));
    }
    let full = random_dense(&mut r, g.weight_shape());
    if conv_dense_4x2(&input, &full, &g, &q, &opts).unwrap().output != conv_reference(&input, &full, &g, &q) {
        return Err(fail("conv-dense-4x2 vs oracle", &g));
    }
    if conv_dense_4x2(&input, &dense, &g, &q, &opts).unwrap().output != conv_reference(&input, &dense, &g, &q) {
        return Err(fail("conv-dense-4x2 (pruned) vs oracle", &g));
    }
    Ok(2)
}

fn criterion_4() -> Criterion {
    let mut c = Criterion::new(4, "functional equivalence, >= 1000 random cases");
    let results: Vec<Result<u32, String>> = (0..1024u64).into_par_iter().map(equivalence_case).collect();
    let cases: u32 = results.iter().filter_map(|r| r.as_ref().ok()).sum();
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    c.check("all outputs bit-exact", errors.is_empty(), errors.first().map_or("none differ".to_string(), |e| e.to_string()));
    c.check("sparse-kernel cases", cases >= 1000, format!("{cases} cases"));
    c
}

// ---------------------------------------------------------------------------
// 5: xDecimate vs software extract + load
// ---------------------------------------------------------------------------

fn criterion_5() -> Criterion {
    const RS1: u8 = 5;
    const RS2: u8 = 6;
    const RD: u8 = 7;
    const T: u8 = 8;
    let mut c = Criterion::new(5, "xDecimate equals the software path, >= 10^4 cases");
    let mut r = rng(5);
    let mut mismatches = Vec::new();
    let cases = 20_000;
    for i in 0..cases {
        let flavor = [Decimate::M4, Decimate::M8, Decimate::M16][r.gen_range(0..3)];
        let mem: Vec<u8> = (0..8192).map(|_| r.gen()).collect();
        let csr = r.gen_range(0..256u32);
        let base = r.gen_range(0..(8192 - flavor.m() * (csr / 2 + 1)) as u32);
        let packed: u32 = r.gen();
        let init: u32 = r.gen();
        let setup = |core: &mut CoreState| {
            core.set_reg(RS1, base);
            core.set_reg(RS2, packed);
            core.set_reg(RD, init);
        };
        let mut hw = CoreState::with_memory(0, mem.clone());
        setup(&mut hw);
        hw.set_csr(csr);
        hw.step(&Instr::XDecimate { flavor, rd: RD, rs1: RS1, rs2: RS2 }).unwrap();

        let mut sw = CoreState::with_memory(0, mem);
        setup(&mut sw);
        let bits = flavor.field_bits();
        let field = csr & flavor.selector_mask();
        let prog = [
            Instr::Shift { op: ShiftOp::Srl, rd: T, rs1: RS2, amount: (field * bits) as u8 },
            Instr::AndI { rd: T, rs1: T, imm: (1 << bits) - 1 },
            Instr::Add { rd: T, rs1: T, rs2: RS1 },
            Instr::AddI { rd: T, rs1: T, imm: (flavor.m() as u32 * (csr >> 1)) as i32 },
            Instr::LbLane { rd: RD, lane: ((csr >> 1) & 3) as u8, addr: Addr::Offset { base: T, imm: 0 } },
        ];
        sw.run_trace(&prog).unwrap();
        if hw.reg(RD) != sw.reg(RD) || hw.csr() != csr + 1 || hw.icount() != 1 {
            mismatches.push(format!("case {i}: hw {:#x} sw {:#x} csr {}", hw.reg(RD), sw.reg(RD), hw.csr()));
        }
    }
    c.check(
        "register contents equal",
        mismatches.is_empty(),
        format!("{cases} cases, {} mismatches {}", mismatches.len(), mismatches.first().cloned().unwrap_or_default()),
    );
    c
}

// ---------------------------------------------------------------------------
// 6: trends on the default sweeps
// ---------------------------------------------------------------------------

fn criterion_6(conv: &SweepResult, fc: &SweepResult) -> Criterion {
    let mut c = Criterion::new(6, "trend properties on the default sweeps");
    let nm = |m| Sparsity::Nm(SparsityPattern::new(m).unwrap());
    let mut mono = Vec::new();
    for (res, kernels) in [
        (conv, [KernelId::ConvSparseSw, KernelId::ConvSparseIsa]),
        (fc, [KernelId::FcSparseSw, KernelId::FcSparseIsa]),
    ] {
        for k in kernels {
            for &cc in &res.config.c_list {
                let s: Vec<f64> = [4, 8, 16].iter().map(|&m| res.row(k, nm(m), cc).unwrap().speedup).collect();
                if !s.windows(2).all(|w| w[0] <= w[1]) {
                    mono.push(format!("{k} C={cc}: {s:?}"));
                }
            }
        }
    }
    c.check("(a) speedup non-decreasing in M", mono.is_empty(), mono.join("; "));
    let slow: Vec<f64> = conv.config.c_list.iter().map(|&cc| conv.row(KernelId::ConvSparseSw, nm(4), cc).unwrap().speedup).collect();
    c.check("(b) conv SW 1:4 slower than dense 1x2", slow.iter().all(|&s| s < 1.0), format!("speedups {slow:.3?}"));
    let mut grow = Vec::new();
    for k in [KernelId::ConvSparseSw, KernelId::ConvSparseIsa] {
        for m in [4, 8, 16] {
            let v: Vec<f64> =
                conv.config.c_list.iter().map(|&cc| conv.row(k, nm(m), cc).unwrap().macs_per_instr_core).collect();
            if !v.windows(2).all(|w| w[0] < w[1]) {
                grow.push(format!("{k} 1:{m}: {v:?}"));
            }
        }
    }
    c.check("(c) conv sparse MACs/instr grows with C", grow.is_empty(), grow.join("; "));
    let above: Vec<String> = conv
        .rows
        .iter()
        .chain(&fc.rows)
        .filter(|r| r.dense_equiv_per_instr_core >= r.peak_dense_equiv_per_instr)
        .map(|r| format!("{} {} C={}", r.kernel, r.sparsity, r.c))
        .collect();
    c.check(
        "(d) whole-kernel ratio below inner-loop peak",
        above.is_empty(),
        format!("{} rows checked {}", conv.rows.len() + fc.rows.len(), above.join("; ")),
    );
    let complete = conv.skipped.is_empty() && fc.skipped.is_empty();
    c.check("sweeps complete", complete, format!("{} conv rows, {} fc rows", conv.rows.len(), fc.rows.len()));
    c
}

// ---------------------------------------------------------------------------
// 7: tiler
// ---------------------------------------------------------------------------

/// Independent L1 footprint: halo-inclusive input tile, output tile, weight
/// tile from the bits-per-dense-weight table, 32-bit bias, buffers doubled,
/// plus the im2col reserve.
fn oracle_l1(g: &LayerGeometry, t: &TileConfig, opts: &TilerOptions) -> usize {
    let bits = match t.format {
        WeightFormat::Dense => 8.0,
        WeightFormat::Sparse { pattern, layout } => {
            let plain = [2.5, 1.5, 0.75];
            let rep = [3.0, 2.0, 1.0];
            let i = [4, 8, 16].iter().position(|&m| m == pattern.m()).unwrap();
            match layout {
                Layout::ReplicatedConv => rep[i],
                _ => plain[i],
            }
        }
    };
    let m = match t.format {
        WeightFormat::Dense => 1,
        WeightFormat::Sparse { pattern, .. } => pattern.m(),
    };
    let red = g.reduction_len().div_ceil(m) * m;
    let weights = ((t.tile_k * red) as f64 * bits / 8.0).ceil() as usize;
    let (input, im2col) = if g.kind == LayerKind::Conv {
        let ih = (g.iy).min((t.tile_oy - 1) * g.s + g.fy);
        let iw = (g.ix).min((t.tile_ox - 1) * g.s + g.fx);
        (ih * iw * g.c, g.fx * g.fy * g.c * 2 * opts.n_cores)
    } else {
        (g.c, 0)
    };
    let per = input + t.tile_oy * t.tile_ox * t.tile_k + weights + 4 * t.tile_k;
    per * if opts.double_buffer { 2 } else { 1 } + im2col
}

fn criterion_7() -> Criterion {
    let mut c = Criterion::new(7, "tiler: 100 random geometries and budgets");
    let mut r = rng(7);
    let (mut over, mut trips, mut order) = (Vec::new(), Vec::new(), Vec::new());
    let mut planned = 0;
    for i in 0..100 {
        let fc = r.gen_bool(0.25);
        let g = if fc {
            LayerGeometry::fc(r.gen_range(1..=512), r.gen_range(1..=64)).unwrap()
        } else {
            let f = r.gen_range(1..=3);
            let hw = r.gen_range(f..=16);
            LayerGeometry::conv(hw, hw, r.gen_range(1..=64), r.gen_range(1..=64), f, f, f / 2, r.gen_range(1..=2)).unwrap()
        };
        let opts = TilerOptions { l1_budget: r.gen_range(4_000..=140_000), n_cores: r.gen_range(1..=8), double_buffer: r.gen() };
        let p = SparsityPattern::ALL[r.gen_range(0..3)];
        let layout = match (fc, r.gen_bool(0.5)) {
            (false, true) => Layout::ReplicatedConv,
            (true, true) => Layout::InterleavedFc,
            _ => Layout::Plain,
        };
        let sparse_fmt = WeightFormat::Sparse { pattern: p, layout };
        let dense = plan_tiles(&g, WeightFormat::Dense, &opts);
        let sparse = plan_tiles(&g, sparse_fmt, &opts);
        for t in [&dense, &sparse].into_iter().flatten() {
            planned += 1;
            let l1 = oracle_l1(&g, t, &opts);
            if l1 > opts.l1_budget || l1 != t.l1_bytes_used {
                over.push(format!("case {i}: oracle {l1}, plan {}, budget {}", t.l1_bytes_used, opts.l1_budget));
            }
        }
        let one16 = plan_tiles(&g, WeightFormat::Sparse { pattern: SparsityPattern::ONE_OF_16, layout: Layout::Plain }, &opts);
        match (&dense, &one16) {
            (Ok(d), Ok(s)) if s.tile_k < d.tile_k => order.push(format!("case {i}: {} < {}", s.tile_k, d.tile_k)),
            (Ok(_), Err(e)) => order.push(format!("case {i}: 1:16 infeasible ({e}) while dense fits")),
            _ => {}
        }
        if let Ok(t) = &sparse {
            let plain = random_sparse(&mut r, g.weight_shape(), p);
            let w = match layout {
                Layout::InterleavedFc => with_layout(&pad_channels_even(&plain).unwrap(), layout).unwrap(),
                l => with_layout(&plain, l).unwrap(),
            };
            let (plan, image) = layout_interleaved(&w, t).unwrap();
            let covered = plan.segments.windows(2).all(|s| s[0].offsets.1 == s[1].values.0 && s[0].channels.1 == s[1].channels.0);
            if read_back(&plan, &image).unwrap() != w || !covered || plan.total_bytes != image.len() {
                trips.push(format!("case {i}"));
            }
        }
    }
    c.check("plans fit on recomputation", over.is_empty(), format!("{planned} plans {}", over.join("; ")));
    c.check("storage plan round-trips", trips.is_empty(), trips.join("; "));
    c.check("1:16 tile_k >= dense tile_k", order.is_empty(), order.join("; "));
    c
}

// ---------------------------------------------------------------------------
// 8: determinism
// ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_nmsparse")).args(args).output().expect("run nmsparse");
    assert!(out.status.success(), "nmsparse {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_8(conv: &SweepResult) -> Criterion {
    let mut c = Criterion::new(8, "determinism of seeded bench commands");
    let net = concat!(env!("CARGO_MANIFEST_DIR"), "/networks/resnet18.json");
    let commands: [&[&str]; 4] = [
        &["bench", "sweep", "--kind", "conv", "--c-list", "32,64", "--seed", "3", "--format", "csv"],
        &["bench", "sweep", "--kind", "fc", "--seed", "3", "--format", "json"],
        &["bench", "sweep", "--kind", "conv", "--c-list", "16", "--k", "32", "--seed", "9", "--format", "md"],
        &["bench", "net", "--layers", net, "--format", "json"],
    ];
    for args in commands {
        let a = cli(args);
        let b = cli(args);
        c.check(format!("nmsparse {}", args[..3].join(" ")), a == b && !a.is_empty(), format!("{} bytes", a.len()));
    }
    let again = sweep_single_layer(&conv.config).unwrap();
    c.check("in-process conv sweep repeated", &again == conv, format!("{} rows", again.rows.len()));
    c
}

#[test]
fn acceptance() {
    let conv = sweep_single_layer(&SweepConfig::conv_default()).unwrap();
    let fc = sweep_single_layer(&SweepConfig::fc_default()).unwrap();
    let ws = traced_windows();
    let criteria = vec![
        criterion_1(&ws),
        criterion_2(&ws),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(&conv, &fc),
        criterion_7(),
        criterion_8(&conv),
    ];
    let mut red = BTreeSet::new();
    for cr in &criteria {
        println!("criterion {}: {} - {}", cr.id, if cr.passed() { "PASS" } else { "FAIL" }, cr.title);
        for ch in &cr.checks {
            println!("    [{}] {}: {}", if ch.ok { "ok" } else { "FAIL" }, ch.name, ch.detail);
            if !ch.ok {
                red.insert((cr.id, ch.name.clone()));
            }
        }
    }
    let known: BTreeSet<(u32, String)> = KNOWN_RED.iter().map(|&(i, n)| (i, n.to_string())).collect();
    assert_eq!(red, known, "failing checks differ from the documented red set");
}
