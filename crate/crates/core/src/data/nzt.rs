//! NZT1 tensor files: magic "NZT1", dtype code u8 (0 = f32, 1 = f64,
//! 2 = u16), rank u8, dims u32 LE each, then raw little-endian data.
//! Bit-exact, dependency-free ingestion for converted datasets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NZT1";

const DTYPE_F32: u8 = 0;
#[allow(dead_code)]
const DTYPE_F64: u8 = 1;
const DTYPE_U16: u8 = 2;

fn write_header(buf: &mut Vec<u8>, dtype: u8, dims: &[usize]) {
    buf.extend_from_slice(MAGIC);
    buf.push(dtype);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

struct Header {
    dtype: u8,
    dims: Vec<usize>,
    payload_at: usize,
}

fn read_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let fail = |msg: &str| Error::DataValidation(format!("{}: {msg}", path.display()));
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(fail("not an NZT1 file"));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut pos = 6;
    for _ in 0..rank {
        if pos + 4 > bytes.len() {
            return Err(fail("truncated header"));
        }
        dims.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    Ok(Header {
        dtype,
        dims,
        payload_at: pos,
    })
}

pub fn write_f32(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.numel() * 4);
    write_header(&mut buf, DTYPE_F32, t.shape());
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let h = read_header(path, &bytes)?;
    if h.dtype != DTYPE_F32 {
        return Err(Error::DataValidation(format!(
            "{}: expected f32 payload, dtype code {}",
            path.display(),
            h.dtype
        )));
    }
    let n: usize = h.dims.iter().product();
    let payload = &bytes[h.payload_at..];
    if payload.len() != n * 4 {
        return Err(Error::DataValidation(format!(
            "{}: payload size {} != {}",
            path.display(),
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(h.dims, data)
}

/// Labels are stored as a rank-2 u16 map.
pub fn write_labels(path: &Path, h: usize, w: usize, data: &[u16]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + data.len() * 2);
    write_header(&mut buf, DTYPE_U16, &[h, w]);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let h = read_header(path, &bytes)?;
    if h.dtype != DTYPE_U16 || h.dims.len() != 2 {
        return Err(Error::DataValidation(format!(
            "{}: labels must be rank-2 u16",
            path.display()
        )));
    }
    let (rows, cols) = (h.dims[0], h.dims[1]);
    let payload = &bytes[h.payload_at..];
    if payload.len() != rows * cols * 2 {
        return Err(Error::DataValidation(format!(
            "{}: payload size {} != {}",
            path.display(),
            payload.len(),
            rows * cols * 2
        )));
    }
    let data = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}
