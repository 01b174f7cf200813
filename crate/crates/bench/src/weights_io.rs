//! JSON form of dense weight tensors, used by the `fmt` subcommands.

use crate::BenchError;
use nmsparse::geometry::WeightShape;
use nmsparse::sparse_format::DenseWeights;
use serde::{Deserialize, Serialize};

/// `{"k":..,"fx":..,"fy":..,"c":..,"data":[..]}`, data in `[k][fy][fx][c]` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseFile {
    #[serde(flatten)]
    pub shape: WeightShape,
    pub data: Vec<i8>,
}

pub fn dense_to_json(w: &DenseWeights) -> Result<Vec<u8>, BenchError> {
    let f = DenseFile { shape: w.shape(), data: w.data().to_vec() };
    let mut v = serde_json::to_vec(&f)?;
    v.push(b'\n');
    Ok(v)
}

pub fn dense_from_json(bytes: &[u8]) -> Result<DenseWeights, BenchError> {
    let f: DenseFile = serde_json::from_slice(bytes)?;
    Ok(DenseWeights::new(f.shape, f.data)?)
}
