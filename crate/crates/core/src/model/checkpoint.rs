//! Self-describing binary checkpoint.
//!
//! Layout (little-endian): magic, format version, config JSON with its
//! sha256, named tensors, then a sha256 over every preceding byte.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::mitst::Mitst;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"MITSTCK1";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &Mitst) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&Sha256::digest(&config));
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (_, t) in params.iter() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
        for v in t.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible {what} {v}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mitst> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let config_len = r.len("config length")?;
    let config_bytes = r.take(config_len, "config")?;
    let stored = hex::encode(r.take(32, "config hash")?);
    let computed = hex::encode(Sha256::digest(config_bytes));
    if stored != computed {
        return Err(Error::ConfigHashMismatch { stored, computed });
    }
    if bytes.len() < 32 {
        return Err(Error::Checkpoint("truncated before integrity hash".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Checkpoint("integrity hash mismatch (file truncated or corrupted)".into()));
    }
    let r_body = &mut Reader { buf: body, pos: r.pos };
    let config: ModelConfig = serde_json::from_slice(config_bytes)?;
    let mut model = Mitst::new(config)?;
    let count = r_body.len("tensor count")?;
    if count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} tensors, configured architecture has {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name_len = r_body.u32("name length")? as usize;
        let name = std::str::from_utf8(r_body.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let rows = r_body.len("rows")?;
        let cols = r_body.len("cols")?;
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
        let expected = model.params().get(id).shape();
        if expected != (rows, cols) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has shape {rows}x{cols}, expected {}x{}", expected.0, expected.1)));
        }
        let raw = r_body.take(rows * cols * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *model.params_mut().get_mut(id) = Matrix::from_vec(rows, cols, data);
    }
    if r_body.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(model)
}

/// Writes the checkpoint and returns the hex sha256 of the file bytes.
pub fn save(model: &Mitst, path: &Path) -> Result<String> {
    let bytes = to_bytes(model);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load(path: &Path) -> Result<Mitst> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex sha256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
