//! LSB-first packing of 2- and 4-bit offset fields.
//!
//! Field `i` of width `w` occupies bits `[i*w, i*w + w)` of the byte stream,
//! counting from bit 0 of byte 0. Because `w` divides 8, a field never
//! straddles a byte, so extraction is one shift and one mask.

use super::FormatError;

fn check_width(bits: u32) -> Result<(), FormatError> {
    match bits {
        2 | 4 => Ok(()),
        other => Err(FormatError::BadFieldWidth(other)),
    }
}

/// Number of bytes needed for `fields` fields of `bits` bits.
pub fn packed_len(fields: usize, bits: u32) -> usize {
    (fields * bits as usize).div_ceil(8)
}

/// Packs `fields` (each `< 2^bits`) LSB-first. Trailing bits of the last byte are zero.
pub fn pack_fields(fields: &[u8], bits: u32) -> Result<Vec<u8>, FormatError> {
    check_width(bits)?;
    let per_byte = (8 / bits) as usize;
    let limit = 1u16 << bits;
    let mut out = vec![0u8; packed_len(fields.len(), bits)];
    for (i, &f) in fields.iter().enumerate() {
        if u16::from(f) >= limit {
            return Err(FormatError::FieldOverflow { index: i, value: f, bits });
        }
        out[i / per_byte] |= f << ((i % per_byte) as u32 * bits);
    }
    Ok(out)
}

/// Reads field `field_index` of width `offset_bits` from `packed`.
pub fn extract_offset(packed: &[u8], field_index: usize, offset_bits: u32) -> Result<u8, FormatError> {
    check_width(offset_bits)?;
    let bit = field_index
        .checked_mul(offset_bits as usize)
        .filter(|&b| b < packed.len() * 8)
        .ok_or(FormatError::FieldOutOfRange { index: field_index, len: packed.len() * 8 / offset_bits as usize })?;
    let mask = (1u8 << offset_bits) - 1;
    Ok((packed[bit / 8] >> (bit % 8)) & mask)
}

/// Unpacks the first `count` fields.
pub fn unpack_fields(packed: &[u8], count: usize, bits: u32) -> Result<Vec<u8>, FormatError> {
    (0..count).map(|i| extract_offset(packed, i, bits)).collect()
}
