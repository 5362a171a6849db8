//! Bit-exact tensor codec: u32 LE ndim, ndim u32 LE dims, numel f32 LE
//! values. `decode(encode(t)) == t` exactly, including NaN payloads, since
//! values travel as raw IEEE-754 bits.

use thiserror::Error;

use crate::tensor::Tensor;

/// Dimension-count cap; anything larger is treated as corruption.
const MAX_NDIM: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("buffer truncated: needed {needed} bytes, had {had}")]
    Truncated { needed: usize, had: usize },
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(usize),
    #[error("dimension product overflows or exceeds the buffer")]
    DimOverflow,
    #[error("tensor claims {0} dims, max {MAX_NDIM}")]
    TooManyDims(usize),
    #[error("zero dimension on the wire")]
    ZeroDim,
    #[error("label value {0} is not a valid class index")]
    BadLabel(f32),
}

/// Encoded size in bytes for a tensor of the given geometry.
pub fn encoded_tensor_len(ndim: usize, numel: usize) -> u64 {
    4 + 4 * ndim as u64 + 4 * numel as u64
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let shape = t.shape();
    let mut out = Vec::with_capacity(encoded_tensor_len(shape.len(), t.numel()) as usize);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, CodecError> {
    let (t, consumed) = decode_tensor_prefix(bytes)?;
    if consumed != bytes.len() {
        return Err(CodecError::TrailingBytes(bytes.len() - consumed));
    }
    Ok(t)
}

/// Decodes one tensor from the front of the buffer, returning it together
/// with the number of bytes consumed. Lets a payload carry several tensors
/// back to back.
pub fn decode_tensor_prefix(bytes: &[u8]) -> Result<(Tensor, usize), CodecError> {
    let take = |offset: usize| -> Result<[u8; 4], CodecError> {
        bytes
            .get(offset..offset + 4)
            .map(|s| [s[0], s[1], s[2], s[3]])
            .ok_or(CodecError::Truncated {
                needed: offset + 4,
                had: bytes.len(),
            })
    };
    let ndim = u32::from_le_bytes(take(0)?) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(CodecError::TooManyDims(ndim));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for i in 0..ndim {
        let d = u32::from_le_bytes(take(4 + 4 * i)?) as usize;
        if d == 0 {
            return Err(CodecError::ZeroDim);
        }
        numel = numel.checked_mul(d).ok_or(CodecError::DimOverflow)?;
        shape.push(d);
    }
    let header = 4 + 4 * ndim;
    let needed = header
        .checked_add(numel.checked_mul(4).ok_or(CodecError::DimOverflow)?)
        .ok_or(CodecError::DimOverflow)?;
    if bytes.len() < needed {
        return Err(CodecError::Truncated {
            needed,
            had: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        data.push(f32::from_le_bytes(take(header + 4 * i)?));
    }
    Ok((
        Tensor::new(shape, data).expect("shape/data consistent by construction"),
        needed,
    ))
}

/// Class indices as a 1-D f32 tensor (small integers are exact in f32).
pub fn labels_to_tensor(labels: &[usize]) -> Tensor {
    Tensor::from_vec(labels.iter().map(|&l| l as f32).collect())
}

pub fn tensor_to_labels(t: &Tensor) -> Result<Vec<usize>, CodecError> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= 1e7 {
                Ok(v as usize)
            } else {
                Err(CodecError::BadLabel(v))
            }
        })
        .collect()
}
