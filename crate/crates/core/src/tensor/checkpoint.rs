//! Weight files: magic, format version (u32 LE), index length (u64 LE), a
//! JSON index, then every tensor as little-endian f32 in index order.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Array, ParamStore, Scalar, TensorError};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SQLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {0} is not supported (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("checkpoint tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error(transparent)]
    Shape(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Array<f32>)>,
}

impl Checkpoint {
    /// Copies every tensor into the parameter of the same name. All
    /// parameters of `store` must be present.
    pub fn load_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<(), CheckpointError> {
        if self.tensors.len() != store.len() {
            return Err(CheckpointError::Tensor {
                name: String::new(),
                msg: format!("{} tensors for {} parameters", self.tensors.len(), store.len()),
            });
        }
        for (name, a) in &self.tensors {
            store.load(name, a.cast())?;
        }
        Ok(())
    }
}

pub fn write_checkpoint<S: Scalar, W: Write>(
    store: &ParamStore<S>,
    meta: serde_json::Value,
    mut out: W,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, a) in store.iter() {
        tensors.push(Entry {
            name: name.to_owned(),
            shape: [a.rows(), a.cols()],
            offset,
        });
        offset += 4 * a.len() as u64;
    }
    let index = serde_json::to_vec(&Index { meta, tensors })?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(index.len() as u64).to_le_bytes())?;
    out.write_all(&index)?;
    for (_, a) in store.iter() {
        for &x in a.data() {
            out.write_all(&(x.to_f64() as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let mut index = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut index)?;
    let index: Index = serde_json::from_slice(&index)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let mut tensors = Vec::new();
    for e in index.tensors {
        let n = e.shape[0] * e.shape[1];
        let start = e.offset as usize;
        let bytes = blob.get(start..start + 4 * n).ok_or_else(|| CheckpointError::Tensor {
            name: e.name.clone(),
            msg: "truncated data".into(),
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((e.name, Array::from_vec(e.shape[0], e.shape[1], data)?));
    }
    Ok(Checkpoint {
        meta: index.meta,
        tensors,
    })
}
