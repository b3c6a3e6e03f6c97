//! On-disk tensor format (`.cft`).
//!
//! Layout, all little-endian:
//!   bytes 0..4   magic "CFT1"
//!   byte  4      dtype code: 0 = f32, 1 = f64, 2 = u8
//!   byte  5      rank
//!   then rank u32 extents
//!   then the row-major element bytes, nothing after.
//!
//! Masks are stored as u8 tensors; features, logits and parameters as
//! f32/f64. Readers check the exact dtype rather than converting silently.

use std::fs;
use std::path::Path;

use super::{Dtype, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFT1";

/// Any tensor a `.cft` file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
            AnyTensor::U8 { .. } => Dtype::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8 { shape, .. } => shape,
        }
    }
}

fn header(dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} exceeds format limit", shape.len())));
    }
    let mut bytes = Vec::with_capacity(6 + shape.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.push(dtype.code());
    bytes.push(shape.len() as u8);
    for &ext in shape {
        let ext32 = u32::try_from(ext)
            .map_err(|_| Error::Format(format!("extent {ext} exceeds u32 range")))?;
        bytes.extend_from_slice(&ext32.to_le_bytes());
    }
    Ok(bytes)
}

pub fn write_tensor<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut bytes = header(T::DTYPE, tensor.shape())?;
    match T::DTYPE {
        Dtype::F32 => {
            for &v in tensor.data() {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in tensor.data() {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Dtype::U8 => unreachable!("Scalar is only f32/f64"),
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_mask(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    if super::numel(shape) != data.len() {
        return Err(Error::dimension(
            "write_mask",
            format!("shape {:?} wants {} elements, got {}", shape, super::numel(shape), data.len()),
        ));
    }
    let mut bytes = header(Dtype::U8, shape)?;
    bytes.extend_from_slice(data);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_any(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path)?;
    let fail = |detail: String| Error::Format(format!("{}: {detail}", path.display()));
    if bytes.len() < 6 {
        return Err(fail("file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let dtype = Dtype::from_code(bytes[4])
        .map_err(|e| fail(e.to_string()))?;
    let rank = bytes[5] as usize;
    let body = 6 + rank * 4;
    if bytes.len() < body {
        return Err(fail("truncated extent table".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 6 + i * 4;
        let ext = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        shape.push(ext as usize);
    }
    let count = super::numel(&shape);
    let expected = body + count * dtype.elem_size();
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload is {} bytes, shape {:?} as {:?} wants {}",
            bytes.len() - body,
            shape,
            dtype,
            count * dtype.elem_size()
        )));
    }
    let payload = &bytes[body..];
    Ok(match dtype {
        Dtype::F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            AnyTensor::F32(Tensor::from_vec(&shape, data)?)
        }
        Dtype::F64 => {
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            AnyTensor::F64(Tensor::from_vec(&shape, data)?)
        }
        Dtype::U8 => AnyTensor::U8 { shape, data: payload.to_vec() },
    })
}

/// Read with a required element type.
pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    match (read_any(path)?, T::DTYPE) {
        (AnyTensor::F32(t), Dtype::F32) => Ok(Tensor::cast_from_f64(&t.to_f64_tensor())),
        (AnyTensor::F64(t), Dtype::F64) => Ok(Tensor::cast_from_f64(&t)),
        (other, want) => Err(Error::Format(format!(
            "{}: holds {:?}, expected {:?}",
            path.display(),
            other.dtype(),
            want
        ))),
    }
}

pub fn read_mask(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    match read_any(path)? {
        AnyTensor::U8 { shape, data } => Ok((shape, data)),
        other => Err(Error::Format(format!(
            "{}: holds {:?}, expected U8",
            path.display(),
            other.dtype()
        ))),
    }
}
