//! Partial im2col: two output positions' receptive fields unrolled into two
//! contiguous 1-D patches.
//!
//! A patch is `fx * fy * c` bytes, filter-row-major with channels innermost,
//! the same order as a weight row. Positions outside the input read as zero.

use super::asm::{post, Asm};
use crate::geometry::{LayerGeometry, Tensor};
use crate::isa_emu::{Reg, ZERO};

/// Two patches back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Im2colBuffer {
    pub data: Vec<i8>,
    /// Output `(oy, ox)` of each patch.
    pub positions: [(usize, usize); 2],
}

impl Im2colBuffer {
    pub fn patch_len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn patch(&self, i: usize) -> &[i8] {
        let n = self.patch_len();
        &self.data[i * n..(i + 1) * n]
    }
}

/// Input row/column read by filter tap `f` at output coordinate `o`, if inside.
fn tap(o: usize, f: usize, s: usize, p: usize, len: usize) -> Option<usize> {
    (o * s + f).checked_sub(p).filter(|&i| i < len)
}

pub fn im2col_partial(input: &Tensor, g: &LayerGeometry, positions: [(usize, usize); 2]) -> Im2colBuffer {
    let r = g.reduction_len();
    let mut data = vec![0i8; 2 * r];
    for (patch, &(oy, ox)) in positions.iter().enumerate() {
        for fy in 0..g.fy {
            for fx in 0..g.fx {
                if let (Some(iy), Some(ix)) = (tap(oy, fy, g.s, g.p, g.iy), tap(ox, fx, g.s, g.p, g.ix)) {
                    let dst = patch * r + (fy * g.fx + fx) * g.c;
                    let src = (iy * g.ix + ix) * g.c;
                    for c in 0..g.c {
                        data[dst + c] = input.data[src + c];
                    }
                }
            }
        }
    }
    Im2colBuffer { data, positions }
}

/// L1 bytes taken by the im2col buffers of `n_cores` cores.
pub fn im2col_l1_bytes(g: &LayerGeometry, n_cores: usize) -> usize {
    g.reduction_len() * 2 * n_cores
}

const SRC: Reg = 29;
const DST: Reg = 30;
const TMP: Reg = 31;

fn emit_zero(asm: &mut Asm, n: usize) {
    if n >= 4 {
        asm.loop_setup(n / 4);
        for _ in 0..n / 4 {
            asm.sw(ZERO, post(DST, 4));
        }
    }
    for _ in 0..n % 4 {
        asm.sb(ZERO, post(DST, 1));
    }
}

fn emit_copy(asm: &mut Asm, n: usize) {
    if n >= 4 {
        asm.loop_setup(n / 4);
        for _ in 0..n / 4 {
            asm.lw(TMP, post(SRC, 4));
            asm.sw(TMP, post(DST, 4));
        }
    }
    for _ in 0..n % 4 {
        asm.lbu(TMP, post(SRC, 1));
        asm.sb(TMP, post(DST, 1));
    }
}

/// Emits the copy of one patch from the HWC input at `input_base` to `dst`.
///
/// Each filter row costs one border test; inside rows copy their in-range
/// taps as one contiguous run and zero-fill the rest.
pub(crate) fn emit_im2col(asm: &mut Asm, g: &LayerGeometry, input_base: usize, dst: usize, (oy, ox): (usize, usize)) {
    asm.li(DST, dst);
    let row_bytes = g.fx * g.c;
    let inside: Vec<usize> = (0..g.fx).filter(|&fx| tap(ox, fx, g.s, g.p, g.ix).is_some()).collect();
    for fy in 0..g.fy {
        asm.branch();
        let Some(iy) = tap(oy, fy, g.s, g.p, g.iy) else {
            emit_zero(asm, row_bytes);
            continue;
        };
        let Some(&first) = inside.first() else {
            emit_zero(asm, row_bytes);
            continue;
        };
        let run = inside.len();
        let ix = tap(ox, first, g.s, g.p, g.ix).unwrap();
        emit_zero(asm, first * g.c);
        asm.li(SRC, input_base + (iy * g.ix + ix) * g.c);
        emit_copy(asm, run * g.c);
        emit_zero(asm, (g.fx - first - run) * g.c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa_emu::CoreState;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::new(h, w, c, (0..h * w * c).map(|v| (v % 251) as i8).collect()).unwrap()
    }

    #[test]
    fn pointwise_patch_is_the_pixel() {
        let g = LayerGeometry::conv(3, 3, 5, 1, 1, 1, 0, 1).unwrap();
        let x = ramp(3, 3, 5);
        let b = im2col_partial(&x, &g, [(1, 1), (1, 2)]);
        assert_eq!(b.patch(0), &x.data[20..25]);
        assert_eq!(b.patch(1), &x.data[25..30]);
    }

    #[test]
    fn corner_patch_has_zero_border() {
        let g = LayerGeometry::conv(4, 4, 2, 1, 3, 3, 1, 1).unwrap();
        let x = Tensor::new(4, 4, 2, vec![1; 32]).unwrap();
        let b = im2col_partial(&x, &g, [(0, 0), (0, 1)]);
        let p = b.patch(0);
        // first filter row and first tap of every row are outside
        assert!(p[..g.fx * g.c].iter().all(|&v| v == 0));
        assert_eq!(&p[3 * 2..4 * 2], &[0, 0]);
        assert_eq!(&p[4 * 2..6 * 2], &[1, 1, 1, 1]);
        assert_eq!(p.iter().filter(|&&v| v == 1).count(), 4 * 2);
    }

    #[test]
    fn l1_requirement() {
        let g = LayerGeometry::conv(8, 8, 256, 256, 3, 3, 1, 1).unwrap();
        assert_eq!(im2col_l1_bytes(&g, 8), 36864);
    }

    proptest! {
        #[test]
        fn emitted_copy_matches_pure_im2col(
            ix in 1usize..7, iy in 1usize..7, c in 1usize..9,
            f in 1usize..4, p in 0usize..2, s in 1usize..3, seed in any::<u64>(),
        ) {
            prop_assume!(ix + 2 * p >= f && iy + 2 * p >= f);
            let g = LayerGeometry::conv(ix, iy, c, 1, f, f, p, s).unwrap();
            let x = Tensor::new(iy, ix, c, (0..g.input_len()).map(|i| ((i as u64 * 31 + seed) % 255) as i8).collect()).unwrap();
            let r = g.reduction_len();
            let dst = x.data.len();
            let mut core = CoreState::new(0, dst + 2 * r);
            core.load_bytes(0, &x.data.iter().map(|&v| v as u8).collect::<Vec<_>>());
            core.mem_mut()[dst..].fill(0x77);
            let pos = [(g.oy - 1, 0), (0, g.ox - 1)];
            let mut asm = Asm::new(&mut core);
            emit_im2col(&mut asm, &g, 0, dst, pos[0]);
            emit_im2col(&mut asm, &g, 0, dst + r, pos[1]);
            asm.finish().unwrap();
            let want = im2col_partial(&x, &g, pos);
            let got: Vec<i8> = core.mem()[dst..].iter().map(|&v| v as i8).collect();
            prop_assert_eq!(got, want.data);
        }
    }
}
