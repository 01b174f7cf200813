//! int32 -> int8 requantization shared by every kernel and oracle.

use serde::{Deserialize, Serialize};

/// Per-layer output stage: `clamp((acc + 2^(shift-1)) >> shift, -128, 127)`,
/// with `acc` initialised to the channel bias. The rounding add wraps like
/// the 32-bit register it runs in.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuantParams {
    pub shift: u8,
    #[serde(default)]
    pub bias: Option<Vec<i32>>,
}

impl QuantParams {
    pub fn shift(shift: u8) -> Self {
        Self { shift, bias: None }
    }

    pub fn with_bias(mut self, bias: Vec<i32>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn bias_of(&self, k: usize) -> i32 {
        self.bias.as_ref().map_or(0, |b| b[k])
    }

    /// Rounding constant added before the shift, if any.
    pub fn rounding(&self) -> Option<i32> {
        (self.shift > 0).then(|| 1i32 << (self.shift - 1))
    }

    pub fn requantize(&self, acc: i32) -> i8 {
        let v = match self.rounding() {
            Some(r) => acc.wrapping_add(r) >> self.shift,
            None => acc,
        };
        v.clamp(-128, 127) as i8
    }
}
