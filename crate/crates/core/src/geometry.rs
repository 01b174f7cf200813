//! Layer hyper-parameters and activation tensors.
//!
//! Naming follows the usual MCU-kernel convention: `ix`/`iy`/`c` for the
//! input, `ox`/`oy`/`k` for the output, `fx`/`fy` for the filter, `p` for
//! symmetric zero padding and `s` for stride. Activations are stored HWC
//! (channel innermost).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("dimension `{0}` must be >= 1")]
    ZeroDim(&'static str),
    #[error("filter {fx}x{fy} does not fit a {ix}x{iy} input with padding {p}")]
    FilterTooLarge { fx: usize, fy: usize, ix: usize, iy: usize, p: usize },
    #[error("output {axis} is {got}, expected {expected} from input, padding and stride")]
    OutputMismatch { axis: &'static str, got: usize, expected: usize },
    #[error("fully-connected geometry must have unit spatial dims and no padding")]
    FcSpatial,
    #[error("tensor holds {got} elements, expected {expected}")]
    TensorLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Full hyper-parameter record of a convolutional or fully-connected layer.
///
/// For [`LayerKind::Fc`], `c` is the number of input features, `k` the number
/// of output features, and every spatial dimension is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub kind: LayerKind,
    pub ix: usize,
    pub iy: usize,
    pub c: usize,
    pub ox: usize,
    pub oy: usize,
    pub k: usize,
    pub fx: usize,
    pub fy: usize,
    pub p: usize,
    pub s: usize,
}

fn out_dim(i: usize, f: usize, p: usize, s: usize) -> Option<usize> {
    (i + 2 * p).checked_sub(f).map(|span| span / s + 1)
}

impl LayerGeometry {
    /// Builds a conv geometry, deriving `ox`/`oy` from the input, padding and stride.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        ix: usize,
        iy: usize,
        c: usize,
        k: usize,
        fx: usize,
        fy: usize,
        p: usize,
        s: usize,
    ) -> Result<Self, GeometryError> {
        for (name, v) in [("ix", ix), ("iy", iy), ("c", c), ("k", k), ("fx", fx), ("fy", fy), ("s", s)] {
            if v == 0 {
                return Err(GeometryError::ZeroDim(name));
            }
        }
        let too_large = || GeometryError::FilterTooLarge { fx, fy, ix, iy, p };
        let ox = out_dim(ix, fx, p, s).ok_or_else(too_large)?;
        let oy = out_dim(iy, fy, p, s).ok_or_else(too_large)?;
        Ok(Self { kind: LayerKind::Conv, ix, iy, c, ox, oy, k, fx, fy, p, s })
    }

    pub fn fc(c: usize, k: usize) -> Result<Self, GeometryError> {
        if c == 0 {
            return Err(GeometryError::ZeroDim("c"));
        }
        if k == 0 {
            return Err(GeometryError::ZeroDim("k"));
        }
        Ok(Self { kind: LayerKind::Fc, ix: 1, iy: 1, c, ox: 1, oy: 1, k, fx: 1, fy: 1, p: 0, s: 1 })
    }

    /// Checks the record's internal consistency (used for geometries that were
    /// deserialized rather than built through the constructors).
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("ix", self.ix),
            ("iy", self.iy),
            ("c", self.c),
            ("ox", self.ox),
            ("oy", self.oy),
            ("k", self.k),
            ("fx", self.fx),
            ("fy", self.fy),
            ("s", self.s),
        ] {
            if v == 0 {
                return Err(GeometryError::ZeroDim(name));
            }
        }
        match self.kind {
            LayerKind::Fc => {
                if [self.ix, self.iy, self.ox, self.oy, self.fx, self.fy, self.s] != [1; 7] || self.p != 0 {
                    return Err(GeometryError::FcSpatial);
                }
            }
            LayerKind::Conv => {
                let (fx, fy, ix, iy, p) = (self.fx, self.fy, self.ix, self.iy, self.p);
                let too_large = || GeometryError::FilterTooLarge { fx, fy, ix, iy, p };
                let ox = out_dim(ix, fx, p, self.s).ok_or_else(too_large)?;
                let oy = out_dim(iy, fy, p, self.s).ok_or_else(too_large)?;
                if ox != self.ox {
                    return Err(GeometryError::OutputMismatch { axis: "ox", got: self.ox, expected: ox });
                }
                if oy != self.oy {
                    return Err(GeometryError::OutputMismatch { axis: "oy", got: self.oy, expected: oy });
                }
            }
        }
        Ok(())
    }

    /// Length of the reduction dimension, `fx * fy * c`.
    pub fn reduction_len(&self) -> usize {
        self.fx * self.fy * self.c
    }

    pub fn output_pixels(&self) -> usize {
        self.ox * self.oy
    }

    /// Dense multiply-accumulate count of the layer.
    pub fn dense_macs(&self) -> u64 {
        (self.output_pixels() * self.k * self.reduction_len()) as u64
    }

    pub fn input_len(&self) -> usize {
        self.ix * self.iy * self.c
    }

    pub fn output_len(&self) -> usize {
        self.ox * self.oy * self.k
    }

    pub fn weight_shape(&self) -> WeightShape {
        WeightShape { k: self.k, fx: self.fx, fy: self.fy, c: self.c }
    }
}

/// Shape of a weight tensor: `k` filters of `fx * fy * c` elements each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightShape {
    pub k: usize,
    pub fx: usize,
    pub fy: usize,
    pub c: usize,
}

impl WeightShape {
    pub fn reduction_len(&self) -> usize {
        self.fx * self.fy * self.c
    }

    pub fn len(&self) -> usize {
        self.k * self.reduction_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An int8 activation tensor in HWC layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i8>,
}

impl Tensor {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<i8>) -> Result<Self, GeometryError> {
        if data.len() != h * w * c {
            return Err(GeometryError::TensorLength { got: data.len(), expected: h * w * c });
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0; h * w * c] }
    }

    /// A 1x1xC tensor, the input/output shape of a fully-connected layer.
    pub fn vector(data: Vec<i8>) -> Self {
        Self { h: 1, w: 1, c: data.len(), data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> i8 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    /// Input shape expected by `geometry`.
    pub fn matches_input(&self, geometry: &LayerGeometry) -> bool {
        match geometry.kind {
            LayerKind::Conv => self.h == geometry.iy && self.w == geometry.ix && self.c == geometry.c,
            LayerKind::Fc => self.data.len() == geometry.c,
        }
    }
}
