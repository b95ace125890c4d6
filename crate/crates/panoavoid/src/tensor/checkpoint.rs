//! Binary checkpoint container: 8-byte magic, version word, JSON manifest
//! with names/shapes/offsets, then raw little-endian f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"PAVDNET\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    /// Opaque model description; interpreted by the policy layer.
    pub spec: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

pub fn save<S: Scalar>(
    path: &Path,
    spec: serde_json::Value,
    params: &[(String, Vec<usize>, &[S])],
) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, shape, data) in params {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CheckpointError::Format(format!(
                "parameter {} has {} values but shape {:?}",
                name,
                data.len(),
                shape
            )));
        }
        entries.push(ParamEntry { name: name.clone(), shape: shape.clone(), offset });
        offset += (data.len() * 4) as u64;
    }
    let manifest = serde_json::to_vec(&Manifest { spec, params: entries })?;

    let mut buf = Vec::with_capacity(24 + manifest.len() + offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for (_, _, data) in params {
        for &v in *data {
            buf.extend_from_slice(&(v.f() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub struct Loaded {
    pub spec: serde_json::Value,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn load(path: &Path) -> Result<Loaded, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Format(format!("{} is not a checkpoint (bad magic)", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported checkpoint version {}", version)));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + mlen {
        return Err(CheckpointError::Format("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[20..20 + mlen])?;
    let payload = &bytes[20 + mlen..];

    let mut params = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(CheckpointError::Format(format!("parameter {} extends past payload", e.name)));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in payload[start..end].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.push((e.name.clone(), e.shape.clone(), data));
    }
    Ok(Loaded { spec: manifest.spec, params })
}
