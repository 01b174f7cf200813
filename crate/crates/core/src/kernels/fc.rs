//! Fully-connected kernels. Activations are read straight from the input
//! vector, work is split over output channels.

use super::asm::{idx, imm, off, post};
use super::{
    bias_bytes, bytes_of, check_input, check_quant, emit_requant, run_job, Job, KernelError, KernelId, KernelRun,
    MemMap, QuantParams, RunOptions, GUARD,
};
use crate::geometry::{LayerGeometry, LayerKind, Tensor};
use crate::isa_emu::{Decimate, Reg};
use crate::sparse_format::{
    interleave_offsets_fc, pack_fields, pad_channels_even, DenseWeights, FormatError, Layout, NmSparseWeights,
};

const WP: Reg = 1;
const OP: Reg = 2;
const BP: Reg = 3;
const OA: Reg = 4;
const XA: Reg = 6;
const ACC1: Reg = 20;
const ACC2: Reg = 21;

#[derive(Debug, Clone, Copy)]
struct FcMap {
    input: usize,
    weights: usize,
    offsets: usize,
    bias: usize,
    out: usize,
}

fn build_map(input: &Tensor, k_out: usize, q: &QuantParams, k: usize, weights: &[u8], offsets: &[u8]) -> (FcMap, Vec<u8>) {
    let mut mm = MemMap::default();
    let map = FcMap {
        input: mm.alloc(input.data.len() + GUARD),
        weights: mm.alloc(weights.len()),
        offsets: mm.alloc(offsets.len() + GUARD),
        bias: mm.alloc(4 * k_out),
        out: mm.alloc(k_out),
    };
    let mut mem = vec![0u8; mm.size()];
    mem[map.input..map.input + input.data.len()].copy_from_slice(&bytes_of(&input.data));
    mem[map.weights..map.weights + weights.len()].copy_from_slice(weights);
    mem[map.offsets..map.offsets + offsets.len()].copy_from_slice(offsets);
    let bias = bias_bytes(q, k);
    mem[map.bias..map.bias + bias.len()].copy_from_slice(&bias);
    (map, mem)
}

fn job<'a>(kernel: KernelId, m: usize, g: &'a LayerGeometry, mem: Vec<u8>, map: &FcMap, k_out: usize, macs: u64) -> Job<'a> {
    Job { kernel, m, g, mem, out_base: map.out, out_stride: 1, out_len: k_out, macs_effective: macs, im2col_per_core: 0 }
}

fn check_shape(g: &LayerGeometry, k: usize, c: usize) -> Result<(), KernelError> {
    if g.k != k || g.c != c {
        return Err(KernelError::Shape(format!("weights {k}x{c} do not match geometry {}x{}", g.k, g.c)));
    }
    Ok(())
}

/// Dense FC, two output channels per inner iteration sharing one activation word.
pub fn fc_dense(
    input: &Tensor,
    w: &DenseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    const P1: Reg = 8;
    const P2: Reg = 9;
    const X: Reg = 10;
    const W1: Reg = 11;
    const W2: Reg = 12;
    check_input(input, g, LayerKind::Fc)?;
    check_shape(g, w.shape().k, w.shape().reduction_len())?;
    check_quant(q, g.k)?;
    let row = g.c.next_multiple_of(4);
    let mut img = vec![0u8; g.k * row];
    for ch in 0..g.k {
        img[ch * row..ch * row + g.c].copy_from_slice(&bytes_of(w.row(ch)));
    }
    let (map, mem) = build_map(input, g.k, q, g.k, &img, &[]);
    let n = row / 4;
    run_job(job(KernelId::FcDense, 1, g, mem, &map, g.k, g.dense_macs()), opts, |asm, s| {
        asm.li(BP, map.bias + 4 * s.start);
        asm.li(OA, map.out + s.start);
        let mut k = s.start;
        while k < s.end {
            asm.branch();
            asm.li(P1, map.weights + k * row);
            asm.li(XA, map.input);
            if k + 1 < s.end {
                asm.addi(P2, P1, imm(row));
                asm.lw(ACC1, post(BP, 4));
                asm.lw(ACC2, post(BP, 4));
                asm.loop_setup(n);
                for it in 0..n {
                    let win = asm.wants_window(it, n);
                    if win {
                        asm.begin_window();
                    }
                    asm.lw(X, post(XA, 4));
                    asm.lw(W1, post(P1, 4));
                    asm.lw(W2, post(P2, 4));
                    asm.sdotp4(ACC1, X, W1);
                    asm.sdotp4(ACC2, X, W2);
                    if win {
                        asm.end_window(8);
                    }
                }
                emit_requant(asm, q, ACC1, OA);
                emit_requant(asm, q, ACC2, OA);
                k += 2;
            } else {
                asm.lw(ACC1, post(BP, 4));
                asm.loop_setup(n);
                for _ in 0..n {
                    asm.lw(X, post(XA, 4));
                    asm.lw(W1, post(P1, 4));
                    asm.sdotp4(ACC1, X, W1);
                }
                emit_requant(asm, q, ACC1, OA);
                k += 1;
            }
        }
    })
}

fn padded_blocks(w: &NmSparseWeights) -> usize {
    w.blocks_per_channel().next_multiple_of(4)
}

fn values_image(w: &NmSparseWeights) -> Vec<u8> {
    let (k, blocks, bp) = (w.shape().k, w.blocks_per_channel(), padded_blocks(w));
    let mut img = vec![0u8; k * bp];
    for ch in 0..k {
        for b in 0..blocks {
            img[ch * bp + b] = w.value(ch, b) as u8;
        }
    }
    img
}

fn offset_or_pad(w: &NmSparseWeights, ch: usize, b: usize) -> u8 {
    if b < w.blocks_per_channel() {
        w.offset(ch, b)
    } else {
        0
    }
}

fn check_sparse(input: &Tensor, w: &NmSparseWeights, g: &LayerGeometry, q: &QuantParams, layout: Layout) -> Result<(), KernelError> {
    check_input(input, g, LayerKind::Fc)?;
    if w.layout() != layout {
        return Err(FormatError::WrongLayout { expected: layout, got: w.layout() }.into());
    }
    check_quant(q, g.k)
}

/// Sparse FC without the decimation instruction: 4 blocks of one channel per iteration.
pub fn fc_sparse_sw(
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
    const VB: Reg = 18;
    check_sparse(input, w, g, q, Layout::Plain)?;
    check_shape(g, w.shape().k, w.shape().reduction_len())?;
    let m = w.pattern().m();
    let bp = padded_blocks(w);
    let fields: Vec<u8> = (0..g.k).flat_map(|ch| (0..bp).map(move |b| (ch, b))).map(|(ch, b)| offset_or_pad(w, ch, b)).collect();
    let offsets = pack_fields(&fields, w.pattern().offset_bits())?;
    let ch_offset_bytes = bp * w.pattern().offset_bits() as usize / 8;
    let (map, mem) = build_map(input, g.k, q, g.k, &values_image(w), &offsets);
    let macs = (g.k * w.blocks_per_channel()) as u64;
    let n = bp / 4;
    run_job(job(KernelId::FcSparseSw, m, g, mem, &map, g.k, macs), opts, |asm, s| {
        asm.li(WP, map.weights + s.start * bp);
        asm.li(OP, map.offsets + s.start * ch_offset_bytes);
        asm.li(BP, map.bias + 4 * s.start);
        asm.li(OA, map.out + s.start);
        for _ in s.start..s.end {
            asm.branch();
            asm.lw(ACC1, post(BP, 4));
            asm.li(XA, map.input);
            asm.loop_setup(n);
            for it in 0..n {
                let win = asm.wants_window(it, n);
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
                asm.lb_lane(VB, 0, idx(XA, O[0]));
                for j in 1..4 {
                    asm.lb_lane(VB, j as u8, off(A[j], imm(j * m)));
                }
                asm.addi(XA, XA, imm(4 * m));
                asm.sdotp4(ACC1, VA, VB);
                if win {
                    asm.end_window(4);
                }
            }
            emit_requant(asm, q, ACC1, OA);
        }
    })
}

/// Converts any layout to the one [`fc_sparse_isa`] consumes: an even number
/// of channels (a zero channel appended if needed) with pair-interleaved offsets.
pub fn prepare_fc_isa(w: &NmSparseWeights) -> Result<NmSparseWeights, FormatError> {
    interleave_offsets_fc(&pad_channels_even(&w.to_plain())?)
}

/// Sparse FC with the decimation instruction: two output channels per
/// iteration, eight decimating loads alternating between their activation registers.
///
/// `w` must be pair-interleaved; its channel count may exceed the layer's by
/// one padding channel (see [`prepare_fc_isa`]).
pub fn fc_sparse_isa(
    input: &Tensor,
    w: &NmSparseWeights,
    g: &LayerGeometry,
    q: &QuantParams,
    opts: &RunOptions,
) -> Result<KernelRun, KernelError> {
    const WP2: Reg = 7;
    const OFS: Reg = 8;
    const VA1: Reg = 16;
    const VA2: Reg = 17;
    const VB1: Reg = 18;
    const VB2: Reg = 19;
    check_sparse(input, w, g, q, Layout::InterleavedFc)?;
    let kp = g.k.next_multiple_of(2);
    if w.shape().reduction_len() != g.c || w.shape().k != kp {
        return Err(KernelError::Shape(format!(
            "weights {}x{} do not match a {}x{} layer padded to {kp} channels",
            w.shape().k,
            w.shape().reduction_len(),
            g.k,
            g.c
        )));
    }
    let m = w.pattern().m();
    let flavor = Decimate::from_m(m).expect("pattern block size is 4, 8 or 16");
    let bp = padded_blocks(w);
    let mut fields = Vec::with_capacity(kp * bp);
    for pair in 0..kp / 2 {
        for b in 0..bp {
            fields.push(offset_or_pad(w, 2 * pair, b));
            fields.push(offset_or_pad(w, 2 * pair + 1, b));
        }
    }
    let offsets = pack_fields(&fields, w.pattern().offset_bits())?;
    let pair_offset_bytes = 2 * bp * w.pattern().offset_bits() as usize / 8;
    let (map, mem) = build_map(input, kp, q, g.k, &values_image(w), &offsets);
    let macs = (g.k * w.blocks_per_channel()) as u64;
    let n = bp / 4;
    run_job(job(KernelId::FcSparseIsa, m, g, mem, &map, kp, macs), opts, |asm, s| {
        asm.li(WP, map.weights + s.start * bp);
        asm.li(OP, map.offsets + s.start / 2 * pair_offset_bytes);
        asm.li(BP, map.bias + 4 * s.start);
        asm.li(OA, map.out + s.start);
        asm.li(XA, map.input);
        for _ in (s.start..s.end).step_by(2) {
            asm.branch();
            asm.addi(WP2, WP, imm(bp));
            asm.lw(ACC1, post(BP, 4));
            asm.lw(ACC2, post(BP, 4));
            asm.loop_setup(n);
            for it in 0..n {
                let win = asm.wants_window(it, n);
                if win {
                    asm.begin_window();
                }
                asm.lw(VA1, post(WP, 4));
                asm.lw(VA2, post(WP2, 4));
                if m == 4 && it % 2 == 0 {
                    asm.lw(OFS, off(OP, 0));
                } else {
                    asm.lw(OFS, post(OP, 4));
                }
                for _ in 0..4 {
                    asm.xdecimate(flavor, VB1, XA, OFS);
                    asm.xdecimate(flavor, VB2, XA, OFS);
                }
                asm.sdotp4(ACC1, VA1, VB1);
                asm.sdotp4(ACC2, VA2, VB2);
                if win {
                    asm.end_window(8);
                }
            }
            if m == 4 && n % 2 == 1 {
                asm.addi(OP, OP, 2);
            }
            asm.mv(WP, WP2);
            emit_requant(asm, q, ACC1, OA);
            emit_requant(asm, q, ACC2, OA);
            asm.xdecimate_clear();
        }
    })
}
