//! Binary checkpoints.
//!
//! ```text
//! magic    "ULITECKPT1"                 10 bytes
//! version  u32 LE
//! count    u32 LE
//! count x  name_len u16 LE | name UTF-8 | rank u8 | dims u32 LE x rank
//!          | payload f32 LE x prod(dims)
//! ```
//!
//! Model parameters come first in definition order, then batch-norm
//! buffers, then (when the optimizer has stepped) `adam.m.*`, `adam.v.*`
//! and the rank-0 scalar `adam.t`. All integers and floats are
//! little-endian, so files are byte-identical across platforms.

use std::collections::HashMap;
use std::path::Path;

use super::adam::Adam;
use crate::arch::{ModelConfig, ULite};
use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 10] = b"ULITECKPT1";
pub const VERSION: u32 = 1;
const STEP_NAME: &str = "adam.t";

#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Serialized size of one tensor record.
pub fn record_len(name: &str, rank: usize, numel: usize) -> usize {
    2 + name.len() + 1 + 4 * rank + 4 * numel
}

pub const HEADER_LEN: usize = 10 + 4 + 4;

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f32])>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::with_capacity(
        HEADER_LEN
            + tensors
                .iter()
                .map(|(n, d, v)| record_len(n, d.len(), v.len()))
                .sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name `{name}` is too long")))?;
        if dims.len() > u8::MAX as usize || dims.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!("tensor `{name}` dims {dims:?} do not match its data")));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim {d} of `{name}` too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: {what} needs {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<RawTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}`: dims {dims:?} overflow")))?;
        let payload = r.take(numel.saturating_mul(4), &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RawTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Encodes model parameters, buffers and optional optimizer state.
pub fn checkpoint_bytes(model: &ULite, adam: Option<&Adam>) -> Result<Vec<u8>> {
    let step: [f32; 1];
    let mut owned: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    for (name, p) in model.named_params() {
        owned.push((name, p.value.shape().to_vec(), p.value.data()));
    }
    for (name, b) in model.named_buffers() {
        owned.push((name, b.shape().to_vec(), b.data()));
    }
    if let Some(adam) = adam.filter(|a| a.steps() > 0) {
        for (name, t) in adam.state_tensors() {
            owned.push((name, t.shape().to_vec(), t.data()));
        }
        step = [adam.steps() as f32];
        owned.push((STEP_NAME.into(), Vec::new(), &step));
    }
    encode(owned.iter().map(|(n, d, v)| (n.as_str(), d.as_slice(), *v)))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ULite, adam: Option<&Adam>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_bytes(model, adam)?)
}

fn take_tensor(map: &mut HashMap<String, RawTensor>, name: &str, expected: [usize; 4]) -> Result<Tensor> {
    let raw = map
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if raw.dims != expected {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` has dims {:?} but the config expects {expected:?}",
            raw.dims
        )));
    }
    Tensor::from_vec(expected, raw.data)
}

/// Overwrites the model's parameters and buffers from decoded tensors and
/// returns the optimizer state if one was saved.
pub fn restore(model: &mut ULite, tensors: Vec<RawTensor>) -> Result<Option<Adam>> {
    let mut order = Vec::with_capacity(tensors.len());
    let mut map = HashMap::with_capacity(tensors.len());
    for t in tensors {
        order.push(t.name.clone());
        if map.insert(t.name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{}`", order.last().unwrap())));
        }
    }
    let mut names = Vec::new();
    let (mut ms, mut vs) = (Vec::new(), Vec::new());
    let has_adam = map.contains_key(STEP_NAME);
    for (name, p) in model.named_params_mut() {
        p.value = take_tensor(&mut map, &name, p.value.shape())?;
        p.zero_grad();
        if has_adam {
            ms.push(take_tensor(&mut map, &format!("adam.m.{name}"), p.value.shape())?);
            vs.push(take_tensor(&mut map, &format!("adam.v.{name}"), p.value.shape())?);
            names.push(name);
        }
    }
    for (name, b) in model.named_buffers_mut() {
        *b = take_tensor(&mut map, &name, b.shape())?;
    }
    let adam = match map.remove(STEP_NAME) {
        Some(t) if t.dims.is_empty() && t.data.len() == 1 => {
            Some(Adam::restore(Adam::default().lr, t.data[0] as u64, names, ms, vs)?)
        }
        Some(t) => return Err(Error::Checkpoint(format!("`{STEP_NAME}` must be a scalar, got dims {:?}", t.dims))),
        None => None,
    };
    if let Some(extra) = order.iter().find(|n| map.contains_key(*n)) {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}` for this config")));
    }
    Ok(adam)
}

/// Builds a model for `config` and fills it from the checkpoint at `path`.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &ModelConfig) -> Result<(ULite, Option<Adam>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let mut model = ULite::new(config)?;
    let adam = restore(&mut model, tensors)?;
    Ok((model, adam))
}
