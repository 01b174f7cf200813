//! Direct loop-nest oracles. They share nothing with the emulated kernels
//! except requantization.

use super::QuantParams;
use crate::geometry::{LayerGeometry, Tensor};
use crate::sparse_format::DenseWeights;

/// Six-loop convolution with zero padding, wrapping int32 accumulation.
pub fn conv_reference(input: &Tensor, w: &DenseWeights, g: &LayerGeometry, q: &QuantParams) -> Tensor {
    let mut out = Tensor::zeros(g.oy, g.ox, g.k);
    for oy in 0..g.oy {
        for ox in 0..g.ox {
            for k in 0..g.k {
                let row = w.row(k);
                let mut acc = q.bias_of(k);
                for fy in 0..g.fy {
                    for fx in 0..g.fx {
                        let iy = (oy * g.s + fy) as isize - g.p as isize;
                        let ix = (ox * g.s + fx) as isize - g.p as isize;
                        if iy < 0 || ix < 0 || iy >= g.iy as isize || ix >= g.ix as isize {
                            continue;
                        }
                        for c in 0..g.c {
                            let a = i32::from(input.at(iy as usize, ix as usize, c));
                            let b = i32::from(row[(fy * g.fx + fx) * g.c + c]);
                            acc = acc.wrapping_add(a * b);
                        }
                    }
                }
                out.data[(oy * g.ox + ox) * g.k + k] = q.requantize(acc);
            }
        }
    }
    out
}

/// Matrix-vector product for fully-connected layers.
pub fn fc_reference(input: &Tensor, w: &DenseWeights, q: &QuantParams) -> Tensor {
    let k = w.shape().k;
    let out = (0..k)
        .map(|ch| {
            let acc = w
                .row(ch)
                .iter()
                .zip(&input.data)
                .fold(q.bias_of(ch), |acc, (&a, &b)| acc.wrapping_add(i32::from(a) * i32::from(b)));
            q.requantize(acc)
        })
        .collect();
    Tensor::vector(out)
}
