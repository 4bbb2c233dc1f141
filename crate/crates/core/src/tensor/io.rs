//! VTEN binary tensor format.
//!
//! Layout: magic `b"VTEN"`, version `u8 = 1`, dtype `u8` (0 = f32, 1 = f64,
//! both little-endian IEEE-754), ndim `u8`, `ndim` little-endian `u64`
//! dimensions, then the row-major payload.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const VTEN_MAGIC: &[u8; 4] = b"VTEN";
pub const VTEN_VERSION: u8 = 1;

pub fn vten_bytes<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let width = std::mem::size_of::<T>();
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + width * t.len());
    out.extend_from_slice(VTEN_MAGIC);
    out.push(VTEN_VERSION);
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a VTEN buffer, converting the payload to `T` if the stored dtype
/// differs.
pub fn read_vten_bytes<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fmt = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 7 || &bytes[..4] != VTEN_MAGIC {
        return Err(fmt("bad VTEN magic"));
    }
    if bytes[4] != VTEN_VERSION {
        return Err(Error::Format(format!("unsupported VTEN version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let ndim = bytes[6] as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let raw = bytes.get(pos..pos + 8).ok_or_else(|| fmt("truncated VTEN header"))?;
        shape.push(u64::from_le_bytes(raw.try_into().unwrap()) as usize);
        pos += 8;
    }
    let n: usize = shape.iter().product();
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::Format(format!("unknown VTEN dtype {other}"))),
    };
    let payload = &bytes[pos..];
    if payload.len() != n * width {
        return Err(Error::Format(format!(
            "VTEN payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * width
        )));
    }
    let data = payload
        .chunks_exact(width)
        .map(|c| match dtype {
            0 => T::of_f64(f32::read_le(c) as f64),
            _ => T::of_f64(f64::read_le(c)),
        })
        .collect();
    Tensor::new(shape, data)
}

pub fn write_vten<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, vten_bytes(t))?;
    Ok(())
}

pub fn read_vten<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_vten_bytes(&std::fs::read(path)?)
}
