//! Binary checkpoint container.
//!
//! Layout (little-endian): 8-byte magic, `u32` format version, `u32` length
//! plus UTF-8 JSON metadata block, `u32` tensor count, then per tensor a
//! `u32`-length-prefixed name, `u32` rank, `u32` dims and `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{LmParams, ModelConfig, ParamTree};
use super::tensor::Tensor;
use super::vocab::Vocab;
use super::ModelError;
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"TCLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Raw container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn write_container(path: &Path, c: &Container) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&c.meta).map_err(|e| ModelError::Format(e.to_string()))?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(c.tensors.len() as u32).to_le_bytes());
    for (name, t) in &c.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

pub fn read_container(path: &Path) -> Result<Container, ModelError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(ModelError::VersionMismatch("bad magic header".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch(format!("version {version}, expected {FORMAT_VERSION}")));
    }
    let meta_len = c.u32()? as usize;
    let meta = serde_json::from_slice(c.take(meta_len)?).map_err(|e| ModelError::Format(e.to_string()))?;
    let count = c.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|e| ModelError::Format(e.to_string()))?;
        let rank = c.u32()?;
        if rank != 2 {
            return Err(ModelError::Format(format!("tensor {name} has rank {rank}")));
        }
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let bytes = c.take(rows * cols * 4)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes"))).collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if c.pos != buf.len() {
        return Err(ModelError::Format("trailing bytes".into()));
    }
    Ok(Container { meta, tensors })
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    vocab: Vocab,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A language model with its vocabulary and any attached tensors (for
/// example a prefix bank) plus their metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: LmParams<T>,
    pub vocab: Vocab,
    pub extra_meta: serde_json::Value,
    pub extra: Vec<(String, Tensor<T>)>,
}

fn to_f32<T: Scalar>(t: &Tensor<T>) -> Tensor<f32> {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|v| v.to_f32_lossy()).collect())
}

fn from_f32<T: Scalar>(t: Tensor<f32>) -> Tensor<T> {
    Tensor::from_vec(t.rows, t.cols, t.data.into_iter().map(<T as crate::Scalar>::from_f32).collect())
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<(), ModelError> {
    let meta = Meta { model: ck.params.config.clone(), vocab: ck.vocab.clone(), extra: ck.extra_meta.clone() };
    let mut tensors: Vec<(String, Tensor<f32>)> = ck.params.named().into_iter().map(|(n, t)| (n, to_f32(t))).collect();
    tensors.extend(ck.extra.iter().map(|(n, t)| (n.clone(), to_f32(t))));
    let meta = serde_json::to_value(meta).map_err(|e| ModelError::Format(e.to_string()))?;
    write_container(path, &Container { meta, tensors })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    let c = read_container(path)?;
    let meta: Meta = serde_json::from_value(c.meta).map_err(|e| ModelError::Format(e.to_string()))?;
    let mut params = LmParams::<T>::init(&meta.model, meta.vocab.len(), 0)?;
    let mut by_name: std::collections::HashMap<String, Tensor<f32>> = c.tensors.into_iter().collect();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = by_name.remove(name).ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(ModelError::Format(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = from_f32(t);
    }
    let mut extra: Vec<(String, Tensor<T>)> = by_name.into_iter().map(|(n, t)| (n, from_f32(t))).collect();
    extra.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Checkpoint { params, vocab: meta.vocab, extra_meta: meta.extra, extra })
}
