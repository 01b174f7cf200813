//! Convolution kernels: partial im2col over two output pixels, then an
//! output-stationary loop over output channels.
//!
//! Weight rows are padded in the L1 image so every inner loop runs whole
//! iterations: dense rows to a multiple of 8 bytes, sparse rows to a
//! multiple of 4 blocks (zero values at offset 0). A single leftover pixel
//! runs the same code with the second patch aliased to the first and only
//! the first result stored.

use super::asm::{idx, imm, off, post, Asm};
use super::im2col::emit_im2col;
use super::{
    bias_bytes, bytes_of, check_input, check_quant, emit_requant, run_job, Job, KernelError, KernelId, KernelRun,
    MemMap, QuantParams, RunOptions, GUARD,
};
use crate::geometry::{LayerGeometry, LayerKind, Tensor};
use crate::isa_emu::{Decimate, Reg};
use crate::sparse_format::{pack_fields, DenseWeights, Layout, NmSparseWeights};

// Registers shared by all conv kernels.
const WP: Reg = 1;
const OP: Reg = 2;
const BP: Reg = 3;
const OA: Reg = 4;
const OB: Reg = 5;
const XA: Reg = 6;
const XB: Reg = 7;
const ACC1: Reg = 20;
const ACC2: Reg = 21;

#[derive(Debug, Clone, Copy)]
struct ConvMap {
    input: usize,
    weights: usize,
    offsets: usize,
    bias: usize,
    im2col: usize,
    out: usize,
}

/// Where the two patches of the current pixel pair live.
#[derive(Debug, Clone, Copy)]
struct Pair {
    buf1: usize,
    buf2: usize,
    /// False for a leftover single pixel (`buf2 == buf1`, second result dropped).
    full: bool,
}

fn build_map(input: &Tensor, g: &LayerGeometry, q: &QuantParams, weights: &[u8], offsets: &[u8]) -> (ConvMap, Vec<u8>) {
    let mut mm = MemMap::default();
    let map = ConvMap {
        input: mm.alloc(input.data.len() + GUARD),
        weights: mm.alloc(weights.len()),
        offsets: mm.alloc(offsets.len() + GUARD),
        bias: mm.alloc(4 * g.k),
        im2col: mm.alloc(2 * g.reduction_len() + GUARD),
        out: mm.alloc(g.output_len()),
    };
    let mut mem = vec![0u8; mm.size()];
    mem[map.input..map.input + input.data.len()].copy_from_slice(&bytes_of(&input.data));
    mem[map.weights..map.weights + weights.len()].copy_from_slice(weights);
    mem[map.offsets..map.offsets + offsets.len()].copy_from_slice(offsets);
    mem[map.bias..map.bias + 4 * g.k].copy_from_slice(&bias_bytes(q, g.k));
    (map, mem)
}

fn pixel(g: &LayerGeometry, p: usize) -> (usize, usize) {
    (p / g.ox, p % g.ox)
}

/// Pixel-pair loop shared by every conv kernel; `channels` emits the loop over output channels.
fn pixel_pairs(asm: &mut Asm, g: &LayerGeometry, map: &ConvMap, start: usize, end: usize, channels: &dyn Fn(&mut Asm, Pair)) {
    let r = g.reduction_len();
    let mut p = start;
    while p < end {
        let full = p + 1 < end;
        asm.branch();
        emit_im2col(asm, g, map.input, map.im2col, pixel(g, p));
        if full {
            emit_im2col(asm, g, map.input, map.im2col + r, pixel(g, p + 1));
        }
        asm.li(OA, map.out + p * g.k);
        if full {
            asm.li(OB, map.out + (p + 1) * g.k);
        }
        let buf2 = if full { map.im2col + r } else { map.im2col };
        channels(asm, Pair { buf1: map.im2col, buf2, full });
        p += 2;
    }
}

fn store_pair(asm: &mut Asm, q: &QuantParams, pair: Pair, a: Reg, b: Reg) {
    emit_requant(asm, q, a, OA);
    if pair.full {
        emit_requant(asm, q, b, OB);
    }
}

fn check_dense(input: &Tensor, w: &DenseWeights, g: &LayerGeometry, q: &QuantParams) -> Result<(), KernelError> {
    check_input(input, g, LayerKind::Conv)?;
    if w.shape() != g.weight_shape() {
        return Err(KernelError::Shape(format!("weights {:?} do not match geometry {:?}", w.shape(), g.weight_shape())));
    }
    check_quant(q, g.k)
}

/// Dense rows padded with zeros to `row` bytes.
fn dense_image(w: &DenseWeights, row: usize) -> Vec<u8> {
    let k = w.shape().k;
    let mut img = vec![0u8; k * row];
    for ch in 0..k {
        let src = bytes_of(w.row(ch));
        img[ch * row..ch * row + src.len()].copy_from_slice(&src);
    }
    img
}

fn dense_row_len(g: &LayerGeometry) -> usize {
    g.reduction_len().next_multiple_of(8)
}

/// One output channel over two patches, 8 reduction elements per iteration:
/// 2 weight words, 2+2 activation words, 4 dot products.
fn dense_1x2_channel(asm: &mut Asm, q: &QuantParams, pair: Pair, row: usize) {
    const W0: Reg = 8;
    const W1: Reg = 9;
    const A0: Reg = 10;
    const A1: Reg = 11;
    const B0: Reg = 12;
    const B1: Reg = 13;
    asm.lw(ACC1, post(BP, 4));
    asm.mv(ACC2, ACC1);
    asm.li(XA, pair.buf1);
    asm.li(XB, pair.buf2);
    let n = row / 8;
    asm.loop_setup(n);
    for it in 0..n {
        let win = pair.full && asm.wants_window(it, n);
        if win {
            asm.begin_window();
        }
        asm.lw(W0, post(WP, 4));
        asm.lw(W1, post(WP, 4));
        asm.lw(A0, post(XA, 4));
        asm.lw(A1, post(XA, 4));
        asm.lw(B0, post(XB, 4));
        asm.lw(B1, post(XB, 4));
        asm.sdotp4(ACC1, A0, W0);
        asm.sdotp4(ACC1, A1, W1);
        asm.sdotp4(ACC2, B0, W0);
        asm.sdotp4(ACC2, B1, W1);
        if win {
            asm.end_window(16);
        }
    }
    store_pair(asm, q, pair, ACC1, ACC2);
}

fn dense_job<'a>(
    kernel: KernelId,
    input: &Tensor,
    w: &DenseWeights,
    g: &'a LayerGeometry,
    q: &QuantParams,
) -> (Job<'a>, ConvMap) {
    let img = dense_image(w, dense_row_len(g));
    let (map, mem) = build_map(input, g, q, &img, &[]);
    let job = Job {
        kernel,
        m: 1,
        g,
        mem,
        out_base: map.out,
        out_stride: g.k,
        out_len: g.output_len(),
        macs_effective: g.dense_macs(),
        im2col_per_core: 2 * g.reduction_len(),
    };
    (job, map)
}

/// Dense convolution, one output channel by two pixels per inner iteration.
pub fn conv_dense_1x2(
    input: &Tensor,
    w: &DenseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    check_dense(input, w, g, q)?;
    let (job, map) = dense_job(KernelId::ConvDense1x2, input, w, g, q);
    let row = dense_row_len(g);
    run_job(job, opts, |asm, s| {
        pixel_pairs(asm, g, &map, s.start, s.end, &|asm, pair| {
            asm.li(WP, map.weights);
            asm.li(BP, map.bias);
            for _ in 0..g.k {
                dense_1x2_channel(asm, q, pair, row);
            }
        })
    })
}

/// Dense convolution, four output channels by two pixels per inner iteration.
/// Channels beyond the last multiple of four use the 1x2 loop.
pub fn conv_dense_4x2(
    input: &Tensor,
    w: &DenseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    const P: [Reg; 4] = [8, 9, 10, 11];
    const W: [Reg; 4] = [12, 13, 14, 15];
    const X1: Reg = 16;
    const X2: Reg = 17;
    const ACC_A: [Reg; 4] = [20, 21, 22, 23];
    const ACC_B: [Reg; 4] = [24, 25, 26, 27];
    check_dense(input, w, g, q)?;
    let (job, map) = dense_job(KernelId::ConvDense4x2, input, w, g, q);
    let row = dense_row_len(g);
    let groups = g.k / 4;
    run_job(job, opts, |asm, s| {
        pixel_pairs(asm, g, &map, s.start, s.end, &|asm, pair| {
            asm.li(BP, map.bias);
            for grp in 0..groups {
                asm.li(P[0], map.weights + 4 * grp * row);
                for i in 1..4 {
                    asm.addi(P[i], P[0], imm(i * row));
                }
                for i in 0..4 {
                    asm.lw(ACC_A[i], post(BP, 4));
                    asm.mv(ACC_B[i], ACC_A[i]);
                }
                asm.li(XA, pair.buf1);
                asm.li(XB, pair.buf2);
                let n = row / 4;
                asm.loop_setup(n);
                for it in 0..n {
                    let win = pair.full && asm.wants_window(it, n);
                    if win {
                        asm.begin_window();
                    }
                    for i in 0..4 {
                        asm.lw(W[i], post(P[i], 4));
                    }
                    asm.lw(X1, post(XA, 4));
                    asm.lw(X2, post(XB, 4));
                    for i in 0..4 {
                        asm.sdotp4(ACC_A[i], X1, W[i]);
                        asm.sdotp4(ACC_B[i], X2, W[i]);
                    }
                    if win {
                        asm.end_window(32);
                    }
                }
                for i in 0..4 {
                    emit_requant(asm, q, ACC_A[i], OA);
                }
                if pair.full {
                    for i in 0..4 {
                        emit_requant(asm, q, ACC_B[i], OB);
                    }
                }
            }
            if g.k % 4 != 0 {
                asm.li(WP, map.weights + 4 * groups * row);
                for _ in 4 * groups..g.k {
                    dense_1x2_channel(asm, q, pair, row);
                }
            }
        })
    })
}

// ---------------------------------------------------------------------------
// Sparse
// ---------------------------------------------------------------------------

/// Blocks per channel in the L1 image, a multiple of 4 so one value word feeds each iteration.
fn padded_blocks(w: &NmSparseWeights) -> usize {
    w.blocks_per_channel().next_multiple_of(4)
}

fn sparse_values_image(w: &NmSparseWeights) -> Vec<u8> {
    let (k, blocks, bp) = (w.shape().k, w.blocks_per_channel(), padded_blocks(w));
    let mut img = vec![0u8; k * bp];
    for ch in 0..k {
        for b in 0..blocks {
            img[ch * bp + b] = w.value(ch, b) as u8;
        }
    }
    img
}

/// Offsets of each channel padded to `padded_blocks`, every field written `copies` times.
fn sparse_offsets_image(w: &NmSparseWeights, copies: usize) -> Vec<u8> {
    let (k, blocks, bp) = (w.shape().k, w.blocks_per_channel(), padded_blocks(w));
    let mut fields = Vec::with_capacity(k * bp * copies);
    for ch in 0..k {
        for b in 0..bp {
            let o = if b < blocks { w.offset(ch, b) } else { 0 };
            fields.extend(std::iter::repeat(o).take(copies));
        }
    }
    pack_fields(&fields, w.pattern().offset_bits()).expect("offsets fit their width")
}

fn check_sparse(
    input: &Tensor,
    w: &NmSparseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    layout: Layout,
) -> Result<(), KernelError> {
    check_input(input, g, LayerKind::Conv)?;
    if w.layout() != layout {
        return Err(crate::sparse_format::FormatError::WrongLayout { expected: layout, got: w.layout() }.into());
    }
    if w.shape() != g.weight_shape() {
        return Err(KernelError::Shape(format!("weights {:?} do not match geometry {:?}", w.shape(), g.weight_shape())));
    }
    check_quant(q, g.k)
}

fn sparse_job<'a>(
    kernel: KernelId,
    input: &Tensor,
    w: &NmSparseWeights,
    g: &'a LayerGeometry,
    q: &QuantParams,
    offsets: &[u8],
) -> (Job<'a>, ConvMap) {
    let (map, mem) = build_map(input, g, q, &sparse_values_image(w), offsets);
    let job = Job {
        kernel,
        m: w.pattern().m(),
        g,
        mem,
        out_base: map.out,
        out_stride: g.k,
        out_len: g.output_len(),
        macs_effective: (g.output_pixels() * g.k * w.blocks_per_channel()) as u64,
        im2col_per_core: 2 * g.reduction_len(),
    };
    (job, map)
}

/// Sparse convolution without the decimation instruction.
///
/// Each iteration covers 4 blocks of one channel for two pixels. The four
/// offsets are unpacked with shifts and masks, turned into addresses
/// relative to the current block base, and the matching activations are
/// gathered byte by byte into two registers.
pub fn conv_sparse_sw(
    input: &Tensor,
    w: &NmSparseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    const T0: Reg = 8;
    const T1: Reg = 9;
    const O: [Reg; 4] = [10, 11, 12, 13];
    const A: [Reg; 4] = [0, 14, 15, 16];
    const VA: Reg = 17;
    const VB1: Reg = 18;
    const VB2: Reg = 19;
    check_sparse(input, w, g, q, Layout::Plain)?;
    let m = w.pattern().m();
    let (job, map) = sparse_job(KernelId::ConvSparseSw, input, w, g, q, &sparse_offsets_image(w, 1));
    let n = padded_blocks(w) / 4;
    run_job(job, opts, |asm, s| {
        pixel_pairs(asm, g, &map, s.start, s.end, &|asm, pair| {
            let d = imm(pair.buf2 - pair.buf1);
            asm.li(WP, map.weights);
            asm.li(OP, map.offsets);
            asm.li(BP, map.bias);
            for _ in 0..g.k {
                asm.lw(ACC1, post(BP, 4));
                asm.mv(ACC2, ACC1);
                asm.li(XA, pair.buf1);
                asm.li(XB, pair.buf2);
                asm.loop_setup(n);
                for it in 0..n {
                    let win = pair.full && asm.wants_window(it, n);
                    if win {
                        asm.begin_window();
                    }
                    asm.lw(VA, post(WP, 4));
                    if m == 4 {
                        asm.lbu(T0, post(OP, 1));
                        asm.andi(O[0], T0, 3);
                        asm.srli(T1, T0, 2);
                        asm.andi(O[1], T1, 3);
                        asm.srli(T1, T0, 4);
                        asm.andi(O[2], T1, 3);
                        asm.srli(O[3], T0, 6);
                    } else {
                        asm.lbu(T0, post(OP, 1));
                        asm.lbu(T1, post(OP, 1));
                        asm.andi(O[0], T0, 15);
                        asm.srli(O[1], T0, 4);
                        asm.andi(O[2], T1, 15);
                        asm.srli(O[3], T1, 4);
                    }
                    for j in 1..4 {
                        asm.add(A[j], XA, O[j]);
                    }
                    asm.lb_lane(VB1, 0, idx(XA, O[0]));
                    asm.lb_lane(VB2, 0, idx(XB, O[0]));
                    for j in 1..4 {
                        let jm = imm(j * m);
                        asm.lb_lane(VB1, j as u8, off(A[j], jm));
                        asm.lb_lane(VB2, j as u8, off(A[j], jm + d));
                    }
                    asm.addi(XA, XA, imm(4 * m));
                    asm.addi(XB, XB, imm(4 * m));
                    asm.sdotp4(ACC1, VA, VB1);
                    asm.sdotp4(ACC2, VA, VB2);
                    if win {
                        asm.end_window(8);
                    }
                }
                store_pair(asm, q, pair, ACC1, ACC2);
            }
        })
    })
}

/// Sparse convolution with the decimation instruction.
///
/// Offsets are stored twice so that the counter, which advances the block
/// and destination lane every second call, selects a fresh copy for each of
/// the two patches. For 1:4 one offset word serves two iterations; the
/// second iteration reloads the same word to keep the loop body uniform.
pub fn conv_sparse_isa(
    input: &Tensor,
    w: &NmSparseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    const OFS: Reg = 8;
    const VA: Reg = 17;
    const VB1: Reg = 18;
    const VB2: Reg = 19;
    check_sparse(input, w, g, q, Layout::ReplicatedConv)?;
    let m = w.pattern().m();
    let flavor = Decimate::from_m(m).expect("pattern block size is 4, 8 or 16");
    let (job, map) = sparse_job(KernelId::ConvSparseIsa, input, w, g, q, &sparse_offsets_image(w, 2));
    let n = padded_blocks(w) / 4;
    run_job(job, opts, |asm, s| {
        pixel_pairs(asm, g, &map, s.start, s.end, &|asm, pair| {
            asm.li(WP, map.weights);
            asm.li(OP, map.offsets);
            asm.li(BP, map.bias);
            asm.li(XA, pair.buf1);
            asm.li(XB, pair.buf2);
            for _ in 0..g.k {
                asm.lw(ACC1, post(BP, 4));
                asm.mv(ACC2, ACC1);
                asm.loop_setup(n);
                for it in 0..n {
                    let win = pair.full && asm.wants_window(it, n);
                    if win {
                        asm.begin_window();
                    }
                    asm.lw(VA, post(WP, 4));
                    if m == 4 && it % 2 == 0 {
                        asm.lw(OFS, off(OP, 0));
                    } else {
                        asm.lw(OFS, post(OP, 4));
                    }
                    for _ in 0..4 {
                        asm.xdecimate(flavor, VB1, XA, OFS);
                        asm.xdecimate(flavor, VB2, XB, OFS);
                    }
                    asm.sdotp4(ACC1, VA, VB1);
                    asm.sdotp4(ACC2, VA, VB2);
                    if win {
                        asm.end_window(8);
                    }
                }
                if m == 4 && n % 2 == 1 {
                    asm.addi(OP, OP, 2);
                }
                store_pair(asm, q, pair, ACC1, ACC2);
                asm.xdecimate_clear();
            }
        })
    })
}
