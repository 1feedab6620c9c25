//! CSV manifests: `image_path,leaf_labels` with semicolon-separated leaf names.
//! Relative image paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use crate::data::image::{load_image, save_raw};
use crate::data::synthetic::Sample;
use crate::error::{Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelVector};
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub leaves: Vec<String>,
    pub labels: LabelVector,
}

/// Parse manifest text; `base` resolves relative image paths.
pub fn parse_manifest(text: &str, base: &Path, h: &LabelHierarchy) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                row: 0,
                reason: format!("missing column '{name}'"),
            })
    };
    let (path_col, label_col) = (col("image_path")?, col("leaf_labels")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let path = rec.get(path_col).unwrap_or_default();
        if path.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty image_path".into(),
            });
        }
        let mut leaves: Vec<String> = Vec::new();
        let mut dup = false;
        for name in rec.get(label_col).unwrap_or_default().split(';').map(str::trim) {
            if name.is_empty() {
                continue;
            }
            if leaves.iter().any(|l| l == name) {
                dup = true;
            } else {
                leaves.push(name.to_string());
            }
        }
        if dup {
            log::warn!("row {row}: duplicate leaf labels removed");
        }
        if leaves.is_empty() {
            return Err(Error::NoLeafLabels(format!(" in row {row}")));
        }
        let labels = h.ancestor_closure(&leaves)?;
        let p = Path::new(path);
        out.push(ManifestEntry {
            image_path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            leaves,
            labels,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("manifest has no rows".into()));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path, h: &LabelHierarchy) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, h)
}

/// Manifest entries with their images read.
pub fn load_dataset(path: &Path, h: &LabelHierarchy) -> Result<Vec<Sample>> {
    load_manifest(path, h)?
        .into_iter()
        .map(|e| {
            Ok(Sample {
                image: load_image(&e.image_path)?,
                labels: e.labels,
            })
        })
        .collect()
}

/// Write `samples` as `images/NNNNN.bin` plus `manifest.csv` under `dir`.
/// Returns the manifest path.
pub fn dump_dataset(dir: &Path, samples: &[Sample], h: &LabelHierarchy) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_path", "leaf_labels"])?;
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:05}.bin");
        save_raw(&dir.join(&rel), &s.image)?;
        let leaves: Vec<&str> = h
            .leaf_ids()
            .iter()
            .filter(|&&l| s.labels.get(l))
            .map(|&l| h.name(l))
            .collect();
        w.write_record([rel.as_str(), leaves.join(";").as_str()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let manifest = dir.join("manifest.csv");
    write_atomic(&manifest, &bytes)?;
    Ok(manifest)
}
