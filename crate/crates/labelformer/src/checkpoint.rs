//! Checkpoints: a JSON manifest plus a flat little-endian f64 blob.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use labelformer_core::model::{Model, ModelConfig, ParameterSet};
use labelformer_core::tensor::Tensor;
use labelformer_core::train::MetricSummary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub step: u64,
    pub train: Option<MetricSummary>,
    pub generalization: Option<MetricSummary>,
    /// Blob file name, relative to the manifest.
    pub data: String,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// `<stem>.json` and `<stem>.bin` for a checkpoint stem.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save(
    stem: &Path,
    model: &Model,
    step: u64,
    metrics: Option<(MetricSummary, MetricSummary)>,
) -> Result<CheckpointManifest> {
    let (json, bin) = paths(stem);
    let mut blob = Vec::with_capacity(model.params.count() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    std::fs::write(&bin, &blob).with_context(|| format!("writing {}", bin.display()))?;
    let manifest = CheckpointManifest {
        config: model.config.clone(),
        step,
        train: metrics.map(|m| m.0),
        generalization: metrics.map(|m| m.1),
        data: bin.file_name().unwrap().to_string_lossy().into_owned(),
        sha256: hex(&Sha256::digest(&blob)),
        tensors,
    };
    std::fs::write(&json, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads a checkpoint from its manifest path (or stem).
pub fn load(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let json = path.with_extension("json");
    let manifest: CheckpointManifest = serde_json::from_str(
        &std::fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?,
    )
    .with_context(|| format!("parsing {}", json.display()))?;
    let bin = json.with_file_name(&manifest.data);
    let blob = std::fs::read(&bin).with_context(|| format!("reading {}", bin.display()))?;
    if hex(&Sha256::digest(&blob)) != manifest.sha256 {
        bail!(
            "{} does not match the hash in {}",
            bin.display(),
            json.display()
        );
    }
    if blob.len() % 8 != 0 {
        bail!("{} is not a whole number of f64 values", bin.display());
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for e in &manifest.tensors {
        let data = values
            .get(e.offset..e.offset + e.len)
            .with_context(|| format!("tensor {} runs past the end of {}", e.name, bin.display()))?;
        names.push(e.name.clone());
        tensors.push(Tensor::new(e.shape.clone(), data.to_vec())?);
    }
    manifest.config.validate()?;
    let params = ParameterSet::from_parts(&manifest.config, names, tensors)?;
    Ok((
        Model {
            config: manifest.config.clone(),
            params,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use labelformer_core::model::Encoding;
    use labelformer_core::tokens::TaskMode;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(
            ModelConfig::new(vec![1, 2], 16, Encoding::Learnable, TaskMode::Multi),
            7,
        )
        .unwrap();
        let stem = dir.path().join("step_100");
        let saved = save(&stem, &m, 100, None).unwrap();
        let (back, manifest) = load(&stem.with_extension("json")).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest, saved);
        assert_eq!(
            std::fs::metadata(stem.with_extension("bin")).unwrap().len() as usize,
            m.params.count() * 8
        );
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(
            ModelConfig::new(vec![1], 8, Encoding::Label, TaskMode::Single),
            1,
        )
        .unwrap();
        let stem = dir.path().join("c");
        save(&stem, &m, 1, None).unwrap();
        let mut b = std::fs::read(stem.with_extension("bin")).unwrap();
        b[3] ^= 1;
        std::fs::write(stem.with_extension("bin"), b).unwrap();
        assert!(load(&stem).is_err());
    }
}
