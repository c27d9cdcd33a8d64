//! Binary tensor file format used for datasets, bases, and checkpoints.
//!
//! Layout, all little-endian:
//!   magic "AEQV" | version u16 | ndim u16 | dims u64 x ndim | flag u8 | payload
//! flag is the element width in bytes (4 = f32, 8 = f64); the payload is
//! row-major. Multi-tensor artifacts (checkpoints, datasets) are directories
//! of one-tensor files plus a JSON manifest.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"AEQV";
pub const VERSION: u16 = 1;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + t.len() * T::ELEM_BYTES as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u16).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(T::ELEM_BYTES);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fail = |msg: &str| Error::Format(format!("tensor file: {msg}"));
    if bytes.len() < 9 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let ndim = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    let mut off = 8;
    if bytes.len() < off + 8 * ndim + 1 {
        return Err(fail("truncated dims"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
        off += 8;
    }
    let flag = bytes[off];
    off += 1;
    if flag != T::ELEM_BYTES {
        return Err(fail(&format!(
            "element width {flag} does not match requested scalar ({})",
            T::ELEM_BYTES
        )));
    }
    let len: usize = dims.iter().product();
    let want = len * T::ELEM_BYTES as usize;
    if bytes.len() - off != want {
        return Err(fail(&format!(
            "payload is {} bytes, dims {:?} need {}",
            bytes.len() - off,
            dims,
            want
        )));
    }
    let step = T::ELEM_BYTES as usize;
    let data = (0..len)
        .map(|i| T::read_le(&bytes[off + i * step..]))
        .collect();
    Tensor::from_vec(&dims, data)
}

/// Element width recorded in a tensor file without decoding the payload.
pub fn peek_elem_bytes(bytes: &[u8]) -> Result<u8> {
    if bytes.len() < 9 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("tensor file: bad header".into()));
    }
    let ndim = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    bytes
        .get(8 + 8 * ndim)
        .copied()
        .ok_or_else(|| Error::Format("tensor file: truncated dims".into()))
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}
