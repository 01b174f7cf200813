//! `NMSW` weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! offset size field
//!      0    4 magic "NMSW"
//!      4    2 version (1)
//!      6    1 layout (0 plain, 1 replicated conv, 2 interleaved fc)
//!      7    1 n (always 1)
//!      8    1 m (4, 8 or 16)
//!      9    4 K
//!     13    1 FX
//!     14    1 FY
//!     15    4 C
//!     19    . values: K * ceil(FX*FY*C / m) bytes
//!      .    . offsets: packed fields, length implied by layout and m
//! ```

use super::{packed_len, FormatError, Layout, NmSparseWeights, SparsityPattern};
use crate::geometry::WeightShape;

pub const FILE_MAGIC: &[u8; 4] = b"NMSW";
pub const FILE_VERSION: u16 = 1;
const HEADER_LEN: usize = 19;

fn err(msg: impl Into<String>) -> FormatError {
    FormatError::File(msg.into())
}

pub fn write_weights(w: &NmSparseWeights) -> Result<Vec<u8>, FormatError> {
    let s = w.shape();
    let fx = u8::try_from(s.fx).map_err(|_| err("FX does not fit in u8"))?;
    let fy = u8::try_from(s.fy).map_err(|_| err("FY does not fit in u8"))?;
    let k = u32::try_from(s.k).map_err(|_| err("K does not fit in u32"))?;
    let c = u32::try_from(s.c).map_err(|_| err("C does not fit in u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + w.values().len() + w.offsets().len());
    out.extend_from_slice(FILE_MAGIC);
    out.extend_from_slice(&FILE_VERSION.to_le_bytes());
    out.push(w.layout().code());
    out.push(w.pattern().n() as u8);
    out.push(w.pattern().m() as u8);
    out.extend_from_slice(&k.to_le_bytes());
    out.push(fx);
    out.push(fy);
    out.extend_from_slice(&c.to_le_bytes());
    out.extend(w.values().iter().map(|&v| v as u8));
    out.extend_from_slice(w.offsets());
    Ok(out)
}

pub fn read_weights(bytes: &[u8]) -> Result<NmSparseWeights, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != FILE_MAGIC {
        return Err(err("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FILE_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let layout = Layout::from_code(bytes[6]).ok_or_else(|| err(format!("unknown layout code {}", bytes[6])))?;
    if bytes[7] != 1 {
        return Err(FormatError::BadPattern(format!("{}:{}", bytes[7], bytes[8])));
    }
    let pattern = SparsityPattern::new(bytes[8].into())?;
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let shape = WeightShape { k: u32_at(9), fx: bytes[13].into(), fy: bytes[14].into(), c: u32_at(15) };
    let n_values = shape.k * pattern.blocks(shape.reduction_len());
    let n_offsets = packed_len(n_values * layout.fields_per_value(), pattern.offset_bits());
    let body = &bytes[HEADER_LEN..];
    if body.len() != n_values + n_offsets {
        return Err(err(format!("payload is {} bytes, header implies {}", body.len(), n_values + n_offsets)));
    }
    let values = body[..n_values].iter().map(|&b| b as i8).collect();
    NmSparseWeights::from_parts(pattern, shape, layout, values, body[n_values..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::{compress_nm, replicate_offsets, DenseWeights};

    fn sample() -> NmSparseWeights {
        let shape = WeightShape { k: 2, fx: 1, fy: 1, c: 8 };
        let d = DenseWeights::new(shape, vec![0, 0, 3, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        compress_nm(&d, SparsityPattern::ONE_OF_8).unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = write_weights(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"NMSW");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6..9], [0, 1, 8]);
        assert_eq!(&bytes[9..13], &[2, 0, 0, 0]);
        assert_eq!(bytes[13..15], [1, 1]);
        assert_eq!(&bytes[15..19], &[8, 0, 0, 0]);
        // values [3, 1] then offsets 2 and 0 packed into one byte.
        assert_eq!(&bytes[19..], &[3, 1, 0x02]);
    }

    #[test]
    fn round_trip_every_layout() {
        let plain = sample();
        let rep = replicate_offsets(&plain).unwrap();
        for w in [plain, rep] {
            assert_eq!(read_weights(&write_weights(&w).unwrap()).unwrap(), w);
        }
    }

    #[test]
    fn rejects_corruption() {
        let good = write_weights(&sample()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(read_weights(&bad).is_err());
        assert!(read_weights(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[8] = 5;
        assert!(matches!(read_weights(&bad), Err(FormatError::BadPattern(_))));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() = 0x09; // offset 9 in a block of 8
        assert!(matches!(read_weights(&bad), Err(FormatError::OffsetRange { .. })));
        assert!(read_weights(&good[..10]).is_err());
    }
}
