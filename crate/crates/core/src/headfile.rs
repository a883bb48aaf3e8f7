//! Binary container for raw head tensors exchanged with an external
//! inference engine.
//!
//! Layout, little-endian: the magic `YF01`, `grid_n: u32`, `channels: u32`,
//! then `grid_n² · channels` `f32` values in `(row, col, channel)` order.

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"YF01";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadFileError {
    #[error("bad magic {0:?}, expected YF01")]
    BadMagic([u8; 4]),
    #[error("file is {found} bytes, header declares {expected}")]
    Length { expected: usize, found: usize },
    #[error("value {index} is not finite")]
    NonFinite { index: usize },
    #[error("tensor is {height}x{width}, head files hold square grids")]
    NonSquare { height: usize, width: usize },
}

pub fn encode_head(tensor: &Tensor) -> Result<Vec<u8>, HeadFileError> {
    let (h, w, c) = tensor.shape();
    if h != w {
        return Err(HeadFileError::NonSquare { height: h, width: w });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * tensor.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for &v in tensor.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_head(bytes: &[u8]) -> Result<Tensor, HeadFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(HeadFileError::Length {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(HeadFileError::BadMagic(magic));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (grid, channels) = (word(4), word(8));
    let count = grid
        .checked_mul(grid)
        .and_then(|n| n.checked_mul(channels))
        .unwrap_or(usize::MAX);
    let expected = count.saturating_mul(4).saturating_add(HEADER_LEN);
    if bytes.len() != expected {
        return Err(HeadFileError::Length {
            expected,
            found: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(count);
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(HeadFileError::NonFinite { index });
        }
        values.push(f64::from(v));
    }
    Ok(Tensor::new(grid, grid, channels, values).expect("length checked above"))
}
