//! Checkpoint files: a JSON manifest with the model description plus a
//! binary parameter blob (`AMCM`, `u32` version, `u32` count, then
//! little-endian `f32` values).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{ModelMeta, TrainedModel};
use super::network::Network;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"AMCM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub model: ModelMeta,
    pub param_count: usize,
    pub blob: String,
    pub sha256: String,
}

pub fn encode_params(net: &Network<f32>) -> Vec<u8> {
    let flat = net.flat_params();
    let mut out = Vec::with_capacity(12 + 4 * flat.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(flat.len() as u32).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(blob: &[u8]) -> Result<Vec<f32>> {
    if blob.len() < 12 || &blob[..4] != MODEL_MAGIC {
        return Err(Error::Format("parameter blob lacks the AMCM magic".into()));
    }
    let version = u32::from_le_bytes(blob[4..8].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(blob[8..12].try_into().expect("4 bytes")) as usize;
    if blob.len() != 12 + 4 * count {
        return Err(Error::Format(format!("blob holds {} bytes for {count} parameters", blob.len())));
    }
    Ok(blob[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn save_model(manifest_path: &Path, model: &TrainedModel) -> Result<PathBuf> {
    use sha2::{Digest, Sha256};
    let blob = encode_params(&model.net);
    let blob_name = manifest_path
        .with_extension("params")
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", manifest_path.display())))?
        .to_string();
    let manifest = CheckpointManifest {
        schema_version: MODEL_VERSION,
        model: model.meta(),
        param_count: model.net.param_count(),
        blob: blob_name.clone(),
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    let dir = manifest_path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    fs::write(dir.map_or_else(|| PathBuf::from(&blob_name), |d| d.join(&blob_name)), &blob)?;
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest_path.to_path_buf())
}

pub fn load_model(manifest_path: &Path) -> Result<TrainedModel> {
    use sha2::{Digest, Sha256};
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let blob_path = manifest_path
        .parent()
        .map_or_else(|| PathBuf::from(&manifest.blob), |d| d.join(&manifest.blob));
    let blob = fs::read(blob_path)?;
    if hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(Error::Format("parameter blob does not match its recorded hash".into()));
    }
    let params = decode_params(&blob)?;
    TrainedModel::from_meta(manifest.model, &params)
}
