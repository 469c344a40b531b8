//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "STLBCKPT"
//! u32       format version
//! u64       header length in bytes
//! header    JSON {"version", "tensors": [{"name", "shape", "offset"}], "metadata"}
//! data      f32 values; `offset` counts f32 elements from the start of data
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STLBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(store: &ParamStore, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.numel();
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        version: CHECKPOINT_VERSION,
        tensors,
        metadata: metadata.clone(),
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + 4 * offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize.checked_add(len).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..end])?;
    if header.version != version {
        return Err(bad("header version disagrees with file version"));
    }
    Ok((header, end))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let (header, start) = decode_header(bytes)?;
    let data = &bytes[start..];
    if data.len() % 4 != 0 {
        return Err(bad("data section is not a whole number of f32 values"));
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad(format!("tensor {} runs past the data section", e.name)))?;
        let t = Tensor::from_vec(&e.shape, slice.iter().map(|v| f64::from(*v)).collect())?;
        store.add(e.name.clone(), t).map_err(|_| bad(format!("duplicate tensor {}", e.name)))?;
    }
    Ok((store, header.metadata))
}

/// Atomic save: the file appears complete or not at all.
pub fn save_checkpoint(path: &Path, store: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(store, metadata)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Copy values from `loaded` into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, model has {}",
            loaded.len(),
            target.len()
        )));
    }
    for (id, p) in loaded.iter() {
        let t = target.get_mut(id);
        if t.name != p.name || t.value.shape() != p.value.shape() {
            return Err(bad(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                p.name,
                p.value.shape(),
                t.name,
                t.value.shape()
            )));
        }
        t.value = p.value.clone();
    }
    Ok(())
}
