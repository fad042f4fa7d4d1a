// SPDX-License-Identifier: Apache-2.0
//! Token-embedding gradient saliency and pooled feature export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::AdpcModel;
use crate::nn::Tape;
use crate::text::Vocabulary;
use crate::train::{class_names, Result, Sample, TrainError};

/// Per-token ranking scores for one class, normalized to max 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyTable {
    pub class: usize,
    pub class_name: String,
    pub scores: Vec<f64>,
    pub n_samples: usize,
    pub checkpoint_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub rank: usize,
    pub id: usize,
    pub token: String,
    pub score: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-wise L2 norms of the embedding-table gradient of the `class` logit.
pub fn embedding_row_norms(model: &AdpcModel, sample: &Sample, class: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new(model.params());
    let trace = model.forward(&mut tape, &sample.input)?;
    let mut seed = Array2::zeros((1, model.config().n_classes));
    seed[[0, class]] = 1.0;
    let grads = tape.backward_with(trace.logits, seed);
    let g = grads
        .get(trace.embedding_table)
        .expect("embedding table is a leaf on every forward pass");
    Ok(g.map_axis(Axis(1), |row| row.dot(&row).sqrt()).to_vec())
}

/// Averages row norms over the first `n_samples` samples labelled `class`
/// (in the order given) and rescales so the largest score is 1.
pub fn embedding_saliency(
    model: &AdpcModel,
    samples: &[&Sample],
    class: usize,
    n_samples: usize,
) -> Result<SaliencyTable> {
    let n_classes = model.config().n_classes;
    let name = class_names(n_classes)
        .get(class)
        .map_or_else(|| class.to_string(), |s| s.to_string());
    let chosen: Vec<&Sample> = samples
        .iter()
        .copied()
        .filter(|s| s.label == class)
        .take(n_samples.max(1))
        .collect();
    if class >= n_classes || chosen.is_empty() {
        return Err(TrainError::ClassAbsent(name));
    }
    let per_sample: Vec<Vec<f64>> = chosen
        .par_iter()
        .map(|s| embedding_row_norms(model, s, class))
        .collect::<Result<_>>()?;
    let v = model.config().vocab_size;
    let mut scores = vec![0.0; v];
    for norms in &per_sample {
        for (s, n) in scores.iter_mut().zip(norms) {
            *s += n;
        }
    }
    let max = scores.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for s in &mut scores {
            *s /= max;
        }
    }
    Ok(SaliencyTable {
        class,
        class_name: name,
        scores,
        n_samples: chosen.len(),
        checkpoint_digest: hex(&model.config().digest()),
    })
}

/// The `top_k` highest-scoring tokens; equal scores keep ascending id order.
pub fn ranking_report(table: &SaliencyTable, vocab: &Vocabulary, top_k: usize) -> Vec<RankedToken> {
    let mut ids: Vec<usize> = (0..table.scores.len()).collect();
    ids.sort_by(|&a, &b| table.scores[b].total_cmp(&table.scores[a]).then(a.cmp(&b)));
    ids.into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, id)| RankedToken {
            rank: i + 1,
            id,
            token: vocab.token(id).unwrap_or("<?>").to_string(),
            score: table.scores[id],
        })
        .collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Columns: rank, token, score.
pub fn write_saliency_csv(path: &Path, ranked: &[RankedToken]) -> Result<()> {
    let mut out = String::from("rank,token,score\n");
    for r in ranked {
        writeln!(out, "{},{},{}", r.rank, csv_field(&r.token), r.score).expect("string write");
    }
    fs::write(path, out).map_err(io(path))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStage {
    /// Mean of the front-door output tokens (the classifier input).
    PostFdaPooled,
    /// Mean of the multi-modal encoder output tokens.
    MultimodalPooled,
}

impl FromStr for FeatureStage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "post_fda_pooled" => Ok(Self::PostFdaPooled),
            "multimodal_pooled" => Ok(Self::MultimodalPooled),
            other => Err(format!("unknown stage `{other}` (post_fda_pooled | multimodal_pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

pub fn export_features(model: &AdpcModel, samples: &[&Sample], stage: FeatureStage) -> Result<Vec<FeatureRow>> {
    samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new(model.params());
            let trace = model.forward(&mut tape, &s.input)?;
            let var = match stage {
                FeatureStage::PostFdaPooled => trace.pooled,
                FeatureStage::MultimodalPooled => trace.pooled_mm,
            };
            Ok(FeatureRow {
                id: s.id.clone(),
                label: s.label,
                features: tape.value(var).iter().copied().collect(),
            })
        })
        .collect()
}

/// Columns: id, label, f0 .. f{d-1}.
pub fn write_features_csv(path: &Path, rows: &[FeatureRow], n_classes: usize) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.features.len());
    let mut out = String::from("id,label");
    for j in 0..width {
        write!(out, ",f{j}").expect("string write");
    }
    out.push('\n');
    let names = class_names(n_classes);
    for r in rows {
        out.push_str(&csv_field(&r.id));
        out.push(',');
        out.push_str(names.get(r.label).copied().unwrap_or("?"));
        for v in &r.features {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io(path))
}
