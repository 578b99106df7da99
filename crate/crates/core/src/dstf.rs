//! DSTF tensor files.
//!
//! ```text
//! "DSTF" | u32 version = 1 | u8 rank | rank × u32 dims | f32 data (row-major)
//! ```
//! All integers and floats are little-endian.

pub const MAGIC: &[u8; 4] = b"DSTF";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DstfError {
    #[error("not a DSTF tensor (bad magic)")]
    BadMagic,
    #[error("unsupported DSTF version {0}")]
    Version(u32),
    #[error("truncated DSTF tensor")]
    Truncated,
    #[error("dims {dims:?} do not match {len} values")]
    ShapeMismatch { dims: Vec<u32>, len: usize },
}

/// Appends one encoded tensor to `out`.
pub fn encode_into(out: &mut Vec<u8>, dims: &[usize], data: &[f32]) -> Result<(), DstfError> {
    let expected: usize = dims.iter().product();
    if expected != data.len() || dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(DstfError::ShapeMismatch {
            dims: dims.iter().map(|&d| d as u32).collect(),
            len: data.len(),
        });
    }
    out.reserve(9 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

pub fn encode(dims: &[usize], data: &[f32]) -> Result<Vec<u8>, DstfError> {
    let mut out = Vec::new();
    encode_into(&mut out, dims, data)?;
    Ok(out)
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>, usize), DstfError> {
    if bytes.len() < 4 {
        return Err(DstfError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(DstfError::BadMagic);
    }
    if bytes.len() < 9 {
        return Err(DstfError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DstfError::Version(version));
    }
    let rank = bytes[8] as usize;
    let mut pos = 9;
    if bytes.len() < pos + 4 * rank {
        return Err(DstfError::Truncated);
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap()) as usize)
        .collect();
    pos += 4 * rank;
    let end = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|len| len.checked_mul(4))
        .and_then(|b| b.checked_add(pos))
        .filter(|&end| end <= bytes.len())
        .ok_or(DstfError::Truncated)?;
    let data = bytes[pos..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data, end))
}

/// Decodes a file holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), DstfError> {
    let (dims, data, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DstfError::ShapeMismatch {
            dims: dims.iter().map(|&d| d as u32).collect(),
            len: (bytes.len() - 9 - 4 * dims.len()) / 4,
        });
    }
    Ok((dims, data))
}
