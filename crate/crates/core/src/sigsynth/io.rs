//! On-disk dataset format.
//!
//! A dataset is a JSON manifest next to a binary blob. The blob starts with
//! the magic `AMCD`, a little-endian `u32` version, `u32` record count and
//! `u32` window length, followed by `N * len * 2` little-endian `f32` values
//! (real, imaginary interleaved per sample) and `N` label bytes.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use super::signal::{Domain, Signal};
use crate::attacks::AttackProvenance;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"AMCD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub length: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub count: usize,
    pub domain: Domain,
    pub snr_db: f64,
    pub seeds: DatasetSeeds,
    pub splits: SplitIndices,
    pub blob: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackProvenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSeeds {
    pub master: u64,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .map_or_else(|| PathBuf::from(blob), |dir| dir.join(blob))
}

pub fn encode_blob(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let n = ds.size();
    let mut out = Vec::with_capacity(HEADER_LEN + n * ds.len * 8 + n);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len as u32).to_le_bytes());
    for s in &ds.signals {
        if s.len() != ds.len {
            return Err(Error::Shape(format!("record of length {} in a {}-sample dataset", s.len(), ds.len)));
        }
        for z in &s.samples {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    for &l in &ds.labels {
        let byte = u8::try_from(l).map_err(|_| Error::Config(format!("label {l} does not fit in a byte")))?;
        out.push(byte);
    }
    Ok(out)
}

/// Hex SHA-256 of the encoded blob; used as the dataset identity in reports.
pub fn dataset_hash(ds: &LabeledDataset) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(encode_blob(ds)?)))
}

/// Write `<stem>.json` and `<stem>.bin` for the dataset; returns the manifest path.
pub fn write_dataset(
    manifest_path: &Path,
    ds: &LabeledDataset,
    attack: Option<AttackProvenance>,
) -> Result<PathBuf> {
    use sha2::{Digest, Sha256};
    let blob = encode_blob(ds)?;
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad manifest path {}", manifest_path.display())))?
        .to_string();
    let manifest = DatasetManifest {
        schema_version: DATASET_VERSION,
        length: ds.len,
        num_classes: ds.num_classes(),
        class_names: ds.class_names.clone(),
        count: ds.size(),
        domain: ds.domain(),
        snr_db: ds.snr_db,
        seeds: DatasetSeeds { master: ds.seed },
        splits: SplitIndices {
            train: ds.indices(Split::Train),
            val: ds.indices(Split::Val),
            test: ds.indices(Split::Test),
        },
        blob: blob_name.clone(),
        sha256: hex::encode(Sha256::digest(&blob)),
        attack,
    };
    if let Some(dir) = manifest_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(blob_path(manifest_path, &blob_name), &blob)?;
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest_path.to_path_buf())
}

pub fn read_dataset(manifest_path: &Path) -> Result<(LabeledDataset, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let blob = fs::read(blob_path(manifest_path, &manifest.blob))?;
    if blob.len() < HEADER_LEN || &blob[..4] != DATASET_MAGIC {
        return Err(Error::Format("dataset blob lacks the AMCD magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(blob[i..i + 4].try_into().expect("4-byte slice")) as usize;
    if word(4) as u32 != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", word(4))));
    }
    let (n, len) = (word(8), word(12));
    if n != manifest.count || len != manifest.length {
        return Err(Error::Format("blob header disagrees with manifest".into()));
    }
    let expected = HEADER_LEN + n * len * 8 + n;
    if blob.len() != expected {
        return Err(Error::Format(format!("blob is {} bytes, expected {expected}", blob.len())));
    }
    let float = |i: usize| f32::from_le_bytes(blob[i..i + 4].try_into().expect("4-byte slice")) as f64;
    let mut signals = Vec::with_capacity(n);
    for r in 0..n {
        let base = HEADER_LEN + r * len * 8;
        let samples = (0..len)
            .map(|k| Complex64::new(float(base + k * 8), float(base + k * 8 + 4)))
            .collect();
        signals.push(Signal {
            samples,
            domain: manifest.domain,
            snr_db: manifest.snr_db,
        });
    }
    let labels_at = HEADER_LEN + n * len * 8;
    let labels: Vec<usize> = blob[labels_at..].iter().map(|&b| b as usize).collect();
    if labels.iter().any(|&l| l >= manifest.num_classes) {
        return Err(Error::Format("label outside the class range".into()));
    }
    let mut splits = vec![None; n];
    for (split, idx) in [
        (Split::Train, &manifest.splits.train),
        (Split::Val, &manifest.splits.val),
        (Split::Test, &manifest.splits.test),
    ] {
        for &i in idx {
            let slot = splits
                .get_mut(i)
                .ok_or_else(|| Error::Format(format!("split index {i} out of range")))?;
            *slot = Some(split);
        }
    }
    let splits = splits
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Format("some records have no split".into()))?;
    let ds = LabeledDataset {
        signals,
        labels,
        class_names: manifest.class_names.clone(),
        splits,
        len,
        snr_db: manifest.snr_db,
        seed: manifest.seeds.master,
    };
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsynth::{generate_dataset, GenerationConfig};

    #[test]
    fn roundtrip_through_disk() {
        let cfg = GenerationConfig { per_class: 20, seed: 4, ..Default::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        write_dataset(&path, &ds, None).unwrap();
        let blob = fs::read(dir.path().join("set.bin")).unwrap();
        assert_eq!(&blob[..4], b"AMCD");
        assert_eq!(u32::from_le_bytes(blob[4..8].try_into().unwrap()), 1);
        let (back, manifest) = read_dataset(&path).unwrap();
        assert_eq!(manifest.count, 80);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.splits, ds.splits);
        for (a, b) in back.signals.iter().zip(&ds.signals) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert!((x - y).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let cfg = GenerationConfig { per_class: 10, ..Default::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        write_dataset(&path, &ds, None).unwrap();
        let bin = dir.path().join("d.bin");
        let mut blob = fs::read(&bin).unwrap();
        blob[0] = b'X';
        fs::write(&bin, blob).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }
}
