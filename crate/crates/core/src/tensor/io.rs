//! `NTSR` tensor files: magic, dtype code, rank, little-endian u64 dims, raw
//! little-endian scalars in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NTSR";

pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes one tensor from the front of `bytes`, returning it and the number of
/// bytes consumed.
pub fn tensor_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    if bytes.len() < 6 {
        return Err(Error::Truncated("tensor header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { expected: "NTSR" });
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::HeaderMismatch(format!("unknown dtype code {}", bytes[4])))?;
    if dtype != T::DTYPE {
        return Err(Error::DType {
            expected: T::DTYPE.name(),
            found: dtype.name(),
        });
    }
    let rank = bytes[5] as usize;
    let mut pos = 6;
    if bytes.len() < pos + 8 * rank {
        return Err(Error::Truncated("tensor dims".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes"));
        dims.push(d as usize);
        pos += 8;
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::HeaderMismatch(format!("dims {dims:?} overflow")))?;
    let size = dtype.size();
    let payload = numel
        .checked_mul(size)
        .ok_or_else(|| Error::HeaderMismatch(format!("dims {dims:?} overflow")))?;
    if bytes.len() < pos + payload {
        return Err(Error::Truncated(format!(
            "tensor {dims:?} needs {payload} payload bytes, {} available",
            bytes.len() - pos
        )));
    }
    let data = bytes[pos..pos + payload].chunks_exact(size).map(T::read_le).collect();
    pos += payload;
    Ok((Tensor::new(&dims, data)?, pos))
}

pub fn write_tensor_to<T: Scalar>(mut w: impl Write, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&tensor_to_bytes(t))
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor_to_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_from<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (t, used) = tensor_from_bytes(bytes)?;
    if used != bytes.len() {
        return Err(Error::HeaderMismatch(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor_from(&bytes)
}
