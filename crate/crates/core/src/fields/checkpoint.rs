//! Binary checkpoint: `u64` little-endian header length, a JSON header, then
//! every parameter block as little-endian `f32` in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldBundle, ModelConfig};

pub const FORMAT: &str = "neused-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint blocks do not match the header: {0}")]
    Blocks(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// "init", "source" or "edited".
    pub stage: String,
    pub model: ModelConfig,
    /// Active encoder levels of background, source and target.
    pub active_levels: [usize; 3],
    /// Free-form run metadata (cameras, seeds).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub blocks: Vec<BlockInfo>,
}

pub fn encode_checkpoint(bundle: &FieldBundle, stage: &str, meta: serde_json::Value) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        stage: stage.into(),
        model: bundle.config.clone(),
        active_levels: bundle.active_levels(),
        meta,
        blocks: bundle
            .blocks()
            .iter()
            .map(|(n, b)| BlockInfo {
                name: (*n).into(),
                len: b.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * bundle.blocks().iter().map(|b| b.1.len()).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, block) in bundle.blocks() {
        for v in block {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FieldBundle, CheckpointHeader), CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Header("file shorter than the length prefix".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| CheckpointError::Header(format!("header length {len} exceeds file")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CheckpointError::Header(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    header
        .model
        .validate()
        .map_err(CheckpointError::Header)?;
    let mut bundle = FieldBundle::new(header.model.clone(), 0);
    let names: Vec<&str> = bundle.blocks().iter().map(|b| b.0).collect();
    let expected: Vec<(String, usize)> = bundle
        .blocks()
        .iter()
        .map(|(n, b)| ((*n).to_string(), b.len()))
        .collect();
    let got: Vec<(String, usize)> = header.blocks.iter().map(|b| (b.name.clone(), b.len)).collect();
    if expected != got {
        return Err(CheckpointError::Blocks(format!(
            "expected blocks {names:?} with model sizes"
        )));
    }
    let mut data = &bytes[8 + len..];
    let total: usize = got.iter().map(|g| g.1).sum();
    if data.len() != 4 * total {
        return Err(CheckpointError::Blocks(format!(
            "payload has {} bytes, expected {}",
            data.len(),
            4 * total
        )));
    }
    for block in bundle.blocks_mut() {
        for v in block.iter_mut() {
            *v = f32::from_le_bytes(data[..4].try_into().unwrap()) as f64;
            data = &data[4..];
        }
    }
    bundle.set_active_levels(header.active_levels);
    Ok((bundle, header))
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn save_checkpoint(
    path: &Path,
    bundle: &FieldBundle,
    stage: &str,
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_checkpoint(bundle, stage, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldBundle, CheckpointHeader), CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let mut b = FieldBundle::new(ModelConfig::tiny(), 7);
        for block in b.blocks_mut() {
            for v in block.iter_mut() {
                *v = (*v as f32) as f64;
            }
        }
        b.set_active_levels([2, 3, 1]);
        let bytes = encode_checkpoint(&b, "source", serde_json::json!({"seed": 7}));
        let (c, h) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(h.stage, "source");
        assert_eq!(c.active_levels(), [2, 3, 1]);
        for ((_, x), (_, y)) in b.blocks().iter().zip(c.blocks().iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(bytes, encode_checkpoint(&c, "source", serde_json::json!({"seed": 7})));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            decode_checkpoint(b"abc"),
            Err(CheckpointError::Header(_))
        ));
        let mut bytes = (5u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{bad}");
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::Header(_))
        ));
        let b = FieldBundle::new(ModelConfig::tiny(), 0);
        let mut good = encode_checkpoint(&b, "init", serde_json::Value::Null);
        good.truncate(good.len() - 4);
        assert!(matches!(
            decode_checkpoint(&good),
            Err(CheckpointError::Blocks(_))
        ));
    }
}
