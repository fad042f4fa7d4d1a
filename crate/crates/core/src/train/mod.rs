// SPDX-License-Identifier: Apache-2.0
//! Data ingestion, synthetic benchmarks, optimization, metrics, checkpoints
//! and the ablation protocol.

mod ablation;
mod checkpoint;
mod data;
mod manifest;
mod metrics;
mod optim;
mod schedule;
mod synth;
mod trainer;

pub use ablation::{run_ablation, AblationReport, ArmResult, MetricDeltas, SeedRun};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use data::{load_sample, prepare_dataset, summary_text, PreparedData, Sample};
pub use manifest::{load_manifest, stratified_split, write_manifest, SampleRecord, Split};
pub use metrics::{binary_auc, compute_metrics, ClassMetrics, MetricsReport};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use schedule::cosine_lr;
pub use synth::{
    synth_dataset, SynthOutput, SynthSpec, CLASS_KEYWORDS, CORNER_ARTIFACT, PLANTED_FILLER, SPURIOUS_TOKEN,
};
pub use trainer::{evaluate, predict_probabilities, train, write_history_csv, EpochRecord, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontdoor::Eq8Values;
use crate::model::{Ablation, ModelConfig, VisualSource};
use crate::nn::NnError;
use crate::text::{TextError, DEFAULT_MAX_LEN, DEFAULT_VOCAB_CAP};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: referenced file {path} does not exist")]
    MissingFile { line: usize, path: String },
    #[error("line {line}: label `{label}` is not one of {allowed}")]
    BadLabel {
        line: usize,
        label: String,
        allowed: String,
    },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("sample {id}: {message}")]
    BadSample { id: String, message: String },
    #[error("non-finite loss at epoch {epoch}, step {step} (sample {sample})")]
    NonFiniteLoss { epoch: usize, step: usize, sample: String },
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class `{0}` has no samples")]
    ClassAbsent(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint config digest does not match")]
    DigestMismatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Class names for the two supported tasks.
pub fn class_names(n_classes: usize) -> &'static [&'static str] {
    match n_classes {
        2 => &["CN", "AD"],
        _ => &["CN", "MCI", "AD"],
    }
}

pub fn parse_label(label: &str, n_classes: usize) -> Option<usize> {
    class_names(n_classes).iter().position(|c| *c == label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub n_classes: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Visual, text and multi-modal encoder depths.
    pub encoder_depths: [usize; 3],
    pub ablation: Ablation,
    pub fda_eq8_values: Eq8Values,
    pub split_fractions: [f64; 3],
    pub dropout: f64,
    pub max_len: usize,
    pub vocab_cap: usize,
    pub min_freq: usize,
    pub patch: usize,
    pub caam_lambda_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 5e-4,
            batch_size: 16,
            epochs: 30,
            warmup_ratio: 0.1,
            weight_decay: 0.1,
            seed: 0,
            n_classes: 3,
            d_model: 64,
            n_heads: 4,
            encoder_depths: [6, 6, 4],
            ablation: Ablation::Full,
            fda_eq8_values: Eq8Values::F,
            split_fractions: [0.8, 0.1, 0.1],
            dropout: 0.1,
            max_len: DEFAULT_MAX_LEN,
            vocab_cap: DEFAULT_VOCAB_CAP,
            min_freq: 1,
            patch: 8,
            caam_lambda_init: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return bad(format!(
                "split fractions {:?} must be in [0,1] and sum to 1",
                self.split_fractions
            ));
        }
        if !(self.lr_base >= 0.0 && self.lr_base.is_finite()) {
            return bad(format!("lr_base {} must be finite and non-negative", self.lr_base));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0,1]", self.warmup_ratio));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return bad("weight_decay must be >= 0 and dropout in [0,1)".into());
        }
        if !matches!(self.n_classes, 2 | 3) {
            return bad(format!("n_classes must be 2 or 3, got {}", self.n_classes));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_len < 2 || self.patch == 0 {
            return bad("max_len must be >= 2 and patch > 0".into());
        }
        Ok(())
    }

    pub fn model_config(&self, visual: VisualSource, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_classes: self.n_classes,
            d_model: self.d_model,
            n_heads: self.n_heads,
            visual_depth: self.encoder_depths[0],
            text_depth: self.encoder_depths[1],
            multimodal_depth: self.encoder_depths[2],
            visual,
            vocab_size,
            max_len: self.max_len,
            dropout: self.dropout,
            ablation: self.ablation,
            fda_eq8_values: self.fda_eq8_values,
            caam_lambda_init: self.caam_lambda_init,
            init_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let c = TrainConfig {
            split_fractions: [0.7, 0.1, 0.1],
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "encoder_depths": [1, 1, 1]}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr_base, 5e-4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(parse_label("MCI", 3), Some(1));
        assert_eq!(parse_label("MCI", 2), None);
        assert_eq!(parse_label("AD", 2), Some(1));
        assert_eq!(parse_label("ADX", 3), None);
    }
}
