//! JSON-lines dataset files and their manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use labelformer_core::data::{DatasetSpec, SequenceRecord, Split};
use labelformer_core::tasks::{Item, LabeledItem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ItemRow {
    s: u8,
    c: u8,
    t: u8,
    label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RecordRow {
    id: u64,
    split: Split,
    items: Vec<ItemRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub len_range: (usize, usize),
    pub label_range: usize,
    pub train_max_len: usize,
    /// SHA-256 of the JSON-lines file, lowercase hex.
    pub sha256: String,
}

/// One record as a JSON line (no trailing newline).
pub fn record_line(r: &SequenceRecord) -> Result<String> {
    let row = RecordRow {
        id: r.id,
        split: r.split,
        items: r
            .items
            .iter()
            .map(|x| ItemRow {
                s: x.item.shape,
                c: x.item.color,
                t: x.item.texture,
                label: x.label,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&row)?)
}

fn parse_line(line: &str) -> Result<SequenceRecord> {
    let row: RecordRow = serde_json::from_str(line)?;
    let items = row
        .items
        .into_iter()
        .map(|x| {
            Ok(LabeledItem {
                item: Item::new(x.s, x.c, x.t)?,
                label: x.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceRecord {
        id: row.id,
        split: row.split,
        items,
    })
}

/// Hash of the exact bytes [`write_records`] produces.
pub fn records_sha256(records: &[SequenceRecord]) -> Result<String> {
    let mut h = Sha256::new();
    for r in records {
        h.update(record_line(r)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex(&h.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut p = data.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes the records and `<path>.manifest.json`; returns the manifest.
pub fn write_dataset(
    path: &Path,
    spec: &DatasetSpec,
    records: &[SequenceRecord],
) -> Result<DatasetManifest> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut h = Sha256::new();
    for r in records {
        let line = record_line(r)?;
        h.update(line.as_bytes());
        h.update(b"\n");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    let manifest = DatasetManifest {
        seed: spec.seed,
        n: records.len(),
        len_range: (spec.min_len, spec.max_len),
        label_range: spec.label_range,
        train_max_len: spec.train_max_len,
        sha256: hex(&h.finalize()),
    };
    std::fs::write(
        manifest_path(path),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Reads a dataset and, when a manifest sits next to it, checks its hash.
pub fn read_dataset(path: &Path) -> Result<(Vec<SequenceRecord>, Option<DatasetManifest>)> {
    let r =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut records = Vec::new();
    let mut h = Sha256::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        h.update(line.as_bytes());
        h.update(b"\n");
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    let mp = manifest_path(path);
    let manifest = if mp.exists() {
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&mp)?)?;
        let got = hex(&h.finalize());
        if m.sha256 != got {
            bail!(
                "{} does not match its manifest hash ({} vs {got})",
                path.display(),
                m.sha256
            );
        }
        Some(m)
    } else {
        None
    };
    Ok((records, manifest))
}
