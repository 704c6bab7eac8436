//! Checkpoint container.
//!
//! Layout: the four bytes `S2G1`, a little-endian `u32` manifest length, a
//! JSON manifest listing each tensor's name, shape and byte offset into the
//! payload (plus free-form metadata), then the payload of little-endian `f64`s.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"S2G1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Serialises `store` with attached metadata.
pub fn to_bytes(store: &ParamStore, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::with_capacity(store.numel() * 8);
    for (_, name, t) in store.iter() {
        tensors.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        tensors,
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(8 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses a container back into a store and its metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing S2G1 header".into()));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < mlen {
        return Err(Error::Checkpoint("truncated manifest".into()));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..mlen]).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    let payload = &body[mlen..];
    let mut store = ParamStore::new();
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past payload", e.name)));
        }
        let data = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if store.id(&e.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", e.name)));
        }
        store.insert(e.name, Tensor::new(e.shape, data)?);
    }
    Ok((store, manifest.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let bytes = to_bytes(store, meta)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
