//! Checkpoint file: magic `RCF1`, little-endian u32 version, u32 tensor count,
//! then per tensor a u32-length-prefixed UTF-8 name, u32 rank, u64 dims and the
//! raw row-major `f32` data. A JSON trailer with [`CheckpointMeta`] fills the
//! rest of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelDims, ParamStore};
use crate::binio::{ReadError, Reader, Writer};
use crate::error::{RcfError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    /// Fully resolved run configuration.
    pub config: serde_json::Value,
}

fn ckpt_err(e: ReadError) -> RcfError {
    match e {
        ReadError::Truncated => RcfError::Checkpoint("unexpected end of checkpoint".into()),
        ReadError::Utf8 => RcfError::Checkpoint("invalid tensor name".into()),
    }
}

/// Serialises the store; the bytes are a pure function of the tensors and `meta`.
pub fn encode_checkpoint(store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    store.check_finite()?;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(store.n_tensors() as u32);
    for id in store.ids() {
        let t = store.tensor(id);
        w.str(store.name(id));
        w.u32(t.dims.len() as u32);
        for &d in &t.dims {
            w.u64(d as u64);
        }
        for &x in &t.data {
            w.f32(x);
        }
    }
    let trailer = serde_json::to_vec(meta).map_err(|e| RcfError::Checkpoint(e.to_string()))?;
    w.bytes(&trailer);
    Ok(w.buf)
}

/// Identifier of a checkpoint: hex SHA-256 of its bytes.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(store: &ParamStore<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(store, meta)?;
    std::fs::write(path, bytes).map_err(|e| RcfError::io(path, e))
}

/// Decodes a checkpoint. When `expected` is given, every tensor must match the
/// shape implied by it.
pub fn decode_checkpoint(data: &[u8], expected: Option<&ModelDims>) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let mut r = Reader::new(data);
    let magic = r.take(4).map_err(ckpt_err)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(RcfError::Checkpoint("bad magic: not an RCF checkpoint".into()));
    }
    let version = r.u32().map_err(ckpt_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(RcfError::Checkpoint(format!(
            "version mismatch: file has {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32().map_err(ckpt_err)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.str().map_err(ckpt_err)?;
        let rank = r.u32().map_err(ckpt_err)? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64().map_err(ckpt_err)? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ckpt_err(ReadError::Truncated))?).map_err(ckpt_err)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, dims, values));
    }
    let trailer = r.take(r.remaining()).map_err(ckpt_err)?;
    let meta: CheckpointMeta = serde_json::from_slice(trailer).map_err(|e| {
        if e.is_eof() {
            RcfError::Checkpoint("unexpected end of checkpoint".into())
        } else {
            RcfError::Checkpoint(format!("invalid trailer: {e}"))
        }
    })?;

    let dims = expected.copied().unwrap_or(meta.dims);
    let mut store = ParamStore::<f32>::zeros(dims);
    if tensors.len() != store.n_tensors() {
        return Err(RcfError::Shape {
            tensor: "<tensor count>".into(),
            expected: vec![store.n_tensors()],
            found: vec![tensors.len()],
        });
    }
    for (id, (name, tdims, values)) in store.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
        if store.name(id) != name || store.tensor(id).dims != tdims {
            return Err(RcfError::Shape {
                tensor: store.name(id).to_string(),
                expected: store.tensor(id).dims.clone(),
                found: tdims,
            });
        }
        store.tensor_mut(id).data = values;
    }
    store.check_finite()?;
    Ok((store, meta))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelDims>) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let data = std::fs::read(path).map_err(|e| RcfError::io(path, e))?;
    decode_checkpoint(&data, expected)
}
