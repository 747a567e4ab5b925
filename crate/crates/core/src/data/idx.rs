//! IDX container parsing (big-endian header, unsigned-byte payload).

use super::DataError;
use crate::numerics::Tensor;

/// Magic number of an unsigned-byte IDX file with `ndim` dimensions.
pub fn idx_magic(ndim: u8) -> u32 {
    0x0000_0800 | ndim as u32
}

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Dimensions and raw payload of an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxFile<'a> {
    pub dims: Vec<usize>,
    pub payload: &'a [u8],
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    let chunk = bytes.get(offset..end).ok_or_else(|| DataError::Truncated {
        offset: bytes.len(),
        needed: end - bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

pub fn parse_idx_raw(bytes: &[u8]) -> Result<IdxFile<'_>, DataError> {
    let magic = read_u32(bytes, 0)?;
    let ndim = (magic & 0xff) as u8;
    if magic & 0xffff_ff00 != 0x0000_0800 || ndim == 0 {
        return Err(DataError::BadMagic { offset: 0, found: magic });
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut total: usize = 1;
    for k in 0..ndim as usize {
        let offset = 4 + 4 * k;
        let d = read_u32(bytes, offset)? as usize;
        total = total.checked_mul(d).ok_or(DataError::DimensionOverflow { offset })?;
        dims.push(d);
    }
    let start = 4 + 4 * ndim as usize;
    let available = bytes.len() - start;
    if available < total {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            needed: total - available,
        });
    }
    if available > total {
        return Err(DataError::TrailingBytes {
            offset: start + total,
            extra: available - total,
        });
    }
    Ok(IdxFile {
        dims,
        payload: &bytes[start..],
    })
}

/// Parses an IDX file into a tensor of its dimensions, scaling bytes to [0, 1].
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor, DataError> {
    let file = parse_idx_raw(bytes)?;
    let data = file.payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::new(&file.dims, data).expect("payload length checked"))
}

/// Serializes dimensions and bytes as an IDX file.
pub fn encode_idx(dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&idx_magic(dims.len() as u8).to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
