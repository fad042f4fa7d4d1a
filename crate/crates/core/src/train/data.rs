// SPDX-License-Identifier: Apache-2.0
//! Turns manifest records into model inputs.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::{io_error, stratified_split, Result, SampleRecord, Split, TrainConfig, TrainError};
use crate::model::{ModelInput, VisualInput, VisualSource};
use crate::nn::{read_tensor, VolumeGrid};
use crate::text::{tokenize, validate_summary, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub input: ModelInput,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub visual: VisualSource,
    /// Every record in manifest order.
    pub samples: Vec<Sample>,
}

impl PreparedData {
    pub fn split(&self, which: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == which).collect()
    }
}

/// Validated summary body text fed to the tokenizer.
pub fn summary_text(path: &Path) -> Result<String> {
    let raw = fs::read_to_string(path).map_err(io_error(path))?;
    Ok(validate_summary(&raw)?.body_text())
}

fn read_visual(record: &SampleRecord) -> Result<VisualInput> {
    let (dims, values) = read_tensor(&record.visual)?;
    let bad = |m: String| TrainError::BadSample {
        id: record.id.clone(),
        message: m,
    };
    match dims.as_slice() {
        &[z, y, x] => Ok(VisualInput::Volume(VolumeGrid::new(
            Array3::from_shape_vec((z, y, x), values).map_err(|e| bad(e.to_string()))?,
        ))),
        &[r, c] => Ok(VisualInput::Features(
            Array2::from_shape_vec((r, c), values).map_err(|e| bad(e.to_string()))?,
        )),
        other => Err(bad(format!("visual tensor has {} dims", other.len()))),
    }
}

fn source_of(visual: &VisualInput, patch: usize) -> VisualSource {
    match visual {
        VisualInput::Volume(v) => VisualSource::Volume { dims: v.dims(), patch },
        VisualInput::Features(f) => VisualSource::Features { tokens: f.nrows() },
    }
}

/// Reads one record with an existing vocabulary.
pub fn load_sample(record: &SampleRecord, vocab: &Vocabulary, max_len: usize, split: Split) -> Result<Sample> {
    let text = summary_text(&record.summary)?;
    Ok(Sample {
        id: record.id.clone(),
        label: record.label,
        split,
        input: ModelInput {
            visual: read_visual(record)?,
            tokens: tokenize(&text, vocab, max_len)?,
        },
    })
}

/// Assigns splits, builds the vocabulary from training summaries and loads
/// every sample. Records either all carry a split or none do; in the
/// latter case a stratified split is drawn from the config seed.
pub fn prepare_dataset(
    config: &TrainConfig,
    records: &[SampleRecord],
    vocab: Option<Vocabulary>,
) -> Result<PreparedData> {
    if records.is_empty() {
        return Err(TrainError::EmptySplit("manifest"));
    }
    let given = records.iter().filter(|r| r.split.is_some()).count();
    let splits: Vec<Split> = if given == records.len() {
        records.iter().map(|r| r.split.expect("checked")).collect()
    } else if given == 0 {
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        stratified_split(&labels, config.split_fractions, config.seed)
    } else {
        return Err(TrainError::InvalidConfig(
            "manifest mixes records with and without a split field".into(),
        ));
    };

    let texts: Vec<String> = records
        .par_iter()
        .map(|r| summary_text(&r.summary))
        .collect::<Result<_>>()?;
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let corpus: Vec<&str> = texts
                .iter()
                .zip(&splits)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(t, _)| t.as_str())
                .collect();
            if corpus.is_empty() {
                return Err(TrainError::EmptySplit("train"));
            }
            Vocabulary::build(&corpus, config.min_freq, config.vocab_cap)?
        }
    };

    let samples: Vec<Sample> = records
        .par_iter()
        .zip(texts.par_iter())
        .zip(splits.par_iter())
        .map(|((r, text), &split)| {
            Ok(Sample {
                id: r.id.clone(),
                label: r.label,
                split,
                input: ModelInput {
                    visual: read_visual(r)?,
                    tokens: tokenize(text, &vocab, config.max_len)?,
                },
            })
        })
        .collect::<Result<_>>()?;

    let visual = source_of(&samples[0].input.visual, config.patch);
    for s in &samples {
        if source_of(&s.input.visual, config.patch) != visual {
            return Err(TrainError::BadSample {
                id: s.id.clone(),
                message: "visual shape differs from the first record".into(),
            });
        }
    }
    Ok(PreparedData { vocab, visual, samples })
}
