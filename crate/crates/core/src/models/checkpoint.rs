//! Checkpoint file format, byte-exact on round trip:
//!
//!   magic "NNUZCKPT" | version u32 LE | arch id (u32 len + utf8)
//!   | config canonical JSON (u32 len + bytes)
//!   | per-leaf records: name (u32 len + utf8), dtype u8, rank u8,
//!     dims u32 LE each, raw little-endian data.

use super::{build_model, ArchitectureId, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Dtype, Parameterized, Scalar, Tensor};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"NNUZCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_str(&mut buf, model.config.arch.name());
    write_str(&mut buf, &model.config.to_canonical_json());
    model.visit(&mut |p| {
        write_str(&mut buf, p.name());
        buf.push(T::DTYPE.code());
        buf.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    });
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointFormat("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointFormat("invalid utf-8 string".into()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Rebuild the model from the stored config, then overwrite every leaf with
/// the stored bytes. Every stored leaf must match a model leaf exactly.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { data: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let arch_name = r.string()?;
    let arch = ArchitectureId::parse(&arch_name)?;
    let config: ModelConfig = serde_json::from_str(&r.string()?)?;
    if config.arch != arch {
        return Err(Error::CheckpointFormat(format!(
            "arch id {} disagrees with embedded config {}",
            arch_name,
            config.arch.name()
        )));
    }

    let mut leaves: HashMap<String, Tensor<T>> = HashMap::new();
    while !r.at_end() {
        let name = r.string()?;
        let dtype = Dtype::from_code(r.u8()?)?;
        if dtype != T::DTYPE {
            return Err(Error::CheckpointFormat(format!(
                "leaf {name} has dtype code {}, expected {}",
                dtype.code(),
                T::DTYPE.code()
            )));
        }
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * T::BYTE_WIDTH)?;
        let data: Vec<T> = raw
            .chunks_exact(T::BYTE_WIDTH)
            .map(|c| T::read_le(c))
            .collect();
        if leaves.insert(name.clone(), Tensor::new(dims, data)?).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate leaf {name}")));
        }
    }

    let mut model = build_model::<T>(arch, &config)?;
    let mut missing = Vec::new();
    model.visit_mut(&mut |p| match leaves.remove(p.name()) {
        Some(t) => {
            if t.shape() == p.value.shape() {
                p.value = t;
            } else {
                missing.push(format!("{} (shape mismatch)", p.name()));
            }
        }
        None => missing.push(p.name().to_string()),
    });
    if !missing.is_empty() {
        return Err(Error::CheckpointFormat(format!(
            "leaves missing or mismatched: {}",
            missing.join(", ")
        )));
    }
    if !leaves.is_empty() {
        let extra: Vec<String> = leaves.keys().cloned().collect();
        return Err(Error::CheckpointFormat(format!(
            "checkpoint has extra leaves: {}",
            extra.join(", ")
        )));
    }
    Ok(model)
}
