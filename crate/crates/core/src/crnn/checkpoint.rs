//! Binary checkpoint format.
//!
//! Layout (little endian): magic `CRNN`, version `u32`, config JSON
//! (`u32` length + UTF-8), tensor count `u32`, then per tensor: name
//! (`u32` length + UTF-8), rank `u8`, dims `u32` each, `f32` data.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::CrnnModel;
use super::real::Real;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CRNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ckpt_err(tensor: Option<&str>, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        tensor: tensor.map(str::to_owned),
        message: message.into(),
    }
}

pub fn encode_checkpoint<T: Real>(model: &CrnnModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let tensors = model.all_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str, tensor: Option<&str>) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ckpt_err(tensor, format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str, tensor: Option<&str>) -> Result<u32> {
        let b = self.take(4, what, tensor)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str, tensor: Option<&str>) -> Result<String> {
        let n = self.u32(what, tensor)? as usize;
        let b = self.take(n, what, tensor)?;
        String::from_utf8(b.to_vec()).map_err(|_| ckpt_err(tensor, format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CrnnModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic", None)? != MAGIC {
        return Err(ckpt_err(None, "bad magic, not a checkpoint"));
    }
    let version = r.u32("version", None)?;
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(None, format!("unsupported version {version}")));
    }
    let json = r.string("config", None)?;
    let config: ModelConfig =
        serde_json::from_str(&json).map_err(|e| ckpt_err(None, format!("invalid config: {e}")))?;
    let mut model = CrnnModel::<f32>::zeroed(config)?;
    let count = r.u32("tensor count", None)? as usize;
    let mut expected = model.all_tensors_mut();
    if count != expected.len() {
        return Err(ckpt_err(
            None,
            format!("file has {count} tensors, config needs {}", expected.len()),
        ));
    }
    for slot in expected.iter_mut() {
        let name = r.string("tensor name", Some(&slot.name))?;
        if name != slot.name {
            return Err(ckpt_err(Some(&slot.name), format!("found tensor `{name}` in its place")));
        }
        let rank = r.take(1, "rank", Some(&name))?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims", Some(&name))? as usize);
        }
        if dims != slot.dims {
            return Err(ckpt_err(
                Some(&name),
                format!("shape {dims:?} does not match expected {:?}", slot.dims),
            ));
        }
        let raw = r.take(slot.data.len() * 4, "tensor data", Some(&name))?;
        for (d, b) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !d.is_finite() {
                return Err(ckpt_err(Some(&name), "non-finite value"));
            }
        }
    }
    drop(expected);
    if r.pos != bytes.len() {
        return Err(ckpt_err(None, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &CrnnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CrnnModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Checks that `model` has exactly the tensor shapes `expected` implies;
/// the error names the first mismatching tensor.
pub fn check_compatible<T: Real>(model: &CrnnModel<T>, expected: &ModelConfig) -> Result<()> {
    let want = CrnnModel::<T>::zeroed(expected.clone())?;
    let have = model.all_tensors();
    for w in want.all_tensors() {
        match have.iter().find(|h| h.name == w.name) {
            None => return Err(ckpt_err(Some(&w.name), "missing from checkpoint")),
            Some(h) if h.dims != w.dims => {
                return Err(ckpt_err(
                    Some(&w.name),
                    format!("shape {:?} does not match expected {:?}", h.dims, w.dims),
                ))
            }
            _ => {}
        }
    }
    if let Some(extra) = have.iter().find(|h| !want.all_tensors().iter().any(|w| w.name == h.name)) {
        return Err(ckpt_err(Some(&extra.name), "not expected by the configuration"));
    }
    Ok(())
}

/// Loads a checkpoint and verifies it against the expected configuration.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<CrnnModel<f32>> {
    let model = load_checkpoint(path)?;
    check_compatible(&model, expected)?;
    Ok(model)
}
