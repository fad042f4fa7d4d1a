// SPDX-License-Identifier: Apache-2.0
//! JSON-lines manifest: one `{id, visual, summary, label[, split]}` object
//! per line. Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_names, io_error, parse_label, Result, TrainError};
use crate::nn::sidecar_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub visual: PathBuf,
    pub summary: PathBuf,
    pub label: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    visual: String,
    summary: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

pub fn load_manifest(path: &Path, n_classes: usize) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(raw).map_err(|e| TrainError::ParseError {
            line,
            message: e.to_string(),
        })?;
        let label = parse_label(&rec.label, n_classes).ok_or_else(|| TrainError::BadLabel {
            line,
            label: rec.label.clone(),
            allowed: class_names(n_classes).join("/"),
        })?;
        let visual = base.join(&rec.visual);
        let summary = base.join(&rec.summary);
        for p in [&visual, &sidecar_path(&visual), &summary] {
            if !p.is_file() {
                return Err(TrainError::MissingFile {
                    line,
                    path: p.display().to_string(),
                });
            }
        }
        out.push(SampleRecord {
            id: rec.id,
            visual,
            summary,
            label,
            split: rec.split,
        });
    }
    Ok(out)
}

/// Writes records with paths relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, records: &[SampleRecord], n_classes: usize) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
    let mut text = String::new();
    for r in records {
        let line = Line {
            id: r.id.clone(),
            visual: rel(&r.visual),
            summary: rel(&r.summary),
            label: class_names(n_classes)[r.label].to_string(),
            split: r.split,
        };
        text.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_error(path))
}

/// Per-class shuffled partition into train/val/test by the given fractions.
pub fn stratified_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; labels.len()];
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out
}
