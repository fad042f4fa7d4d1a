// SPDX-License-Identifier: Apache-2.0
//! Minibatch cross-entropy training with per-epoch validation.
//!
//! Per-sample forward/backward passes run in parallel and are reduced in
//! sample order, so results do not depend on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    adamw_step, compute_metrics, cosine_lr, io_error, AdamWConfig, AdamWState, Checkpoint, MetricsReport, PreparedData,
    Result, Sample, Split, TrainConfig, TrainError,
};
use crate::model::{probabilities, AdpcModel};
use crate::nn::{Gradients, ParamStore, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation-accuracy weights (the last epoch without a validation split).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Per-step training losses, in order.
    pub step_losses: Vec<f64>,
}

fn dropout_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f);
    rng.set_stream(((step as u64) << 20) | slot as u64);
    rng
}

fn sample_gradient(model: &AdpcModel, sample: &Sample, dropout: f64, rng: ChaCha8Rng) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(model.params()).with_dropout(dropout, rng);
    let trace = model.forward(&mut tape, &sample.input)?;
    let loss = tape.cross_entropy(trace.logits, sample.label);
    let value = tape.scalar(loss);
    let mut grads = Gradients::zeros_like(model.params());
    if value.is_finite() {
        let node_grads = tape.backward(loss);
        tape.collect_param_grads(&node_grads, &mut grads);
    }
    Ok((value, grads))
}

pub fn predict_probabilities(model: &AdpcModel, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| Ok(probabilities(&model.predict_logits(&s.input)?)))
        .collect()
}

pub fn evaluate(model: &AdpcModel, samples: &[&Sample]) -> Result<MetricsReport> {
    let probs = predict_probabilities(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(compute_metrics(&labels, &probs, model.config().n_classes))
}

pub fn train(config: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = data.split(Split::Train);
    let val_set = data.split(Split::Val);
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if let Some(s) = data.samples.iter().find(|s| s.label >= config.n_classes) {
        return Err(TrainError::BadSample {
            id: s.id.clone(),
            message: format!("label {} outside {} classes", s.label, config.n_classes),
        });
    }
    let mut model = AdpcModel::new(config.model_config(data.visual, data.vocab.len()))?;
    let adam = AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::new(model.params());

    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut history = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::with_capacity(total_steps);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    sample_gradient(
                        &model,
                        train_set[i],
                        config.dropout,
                        dropout_rng(config.seed, step, slot),
                    )
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(model.params());
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for ((loss, g), &i) in results.iter().zip(batch) {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step,
                        sample: train_set[i].id.clone(),
                    });
                }
                batch_loss += loss * scale;
                grads.add_scaled(g, scale);
            }
            lr = cosine_lr(step, total_steps, config.lr_base, config.warmup_ratio);
            adamw_step(model.params_mut(), &grads, &mut state, lr, &adam)?;
            step_losses.push(batch_loss);
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;
        }
        let loss = epoch_loss / train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, &val_set)?)
        };
        let score = val.as_ref().map_or(f64::INFINITY, |m| m.acc);
        if best.as_ref().is_none_or(|(b, _, _)| score >= *b || val.is_none()) {
            best = Some((score, epoch, model.params().clone()));
        }
        history.push(EpochRecord { epoch, loss, lr, val });
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        best: Checkpoint {
            model,
            vocab: data.vocab.clone(),
        },
        best_epoch,
        history,
        step_losses,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Columns: epoch, loss, acc, f1, precision, recall, auc, lr. Validation
/// columns are empty without a validation split; auc is empty when undefined.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,loss,acc,f1,precision,recall,auc,lr\n");
    for h in history {
        let v = h.val.as_ref();
        writeln!(
            out,
            "{},{:.6},{},{},{},{},{},{:.6e}",
            h.epoch,
            h.loss,
            opt(v.map(|m| m.acc)),
            opt(v.map(|m| m.f1)),
            opt(v.map(|m| m.precision)),
            opt(v.map(|m| m.recall)),
            opt(v.and_then(|m| m.auc)),
            h.lr
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(io_error(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelInput, VisualInput, VisualSource};
    use crate::text::{tokenize, Vocabulary};
    use ndarray::Array2;

    fn toy_data(n: usize) -> PreparedData {
        let vocab = Vocabulary::build(&["alpha beta gamma"], 1, 16).unwrap();
        let words = ["alpha", "beta", "gamma"];
        let samples = (0..n)
            .map(|i| {
                let label = i % 3;
                Sample {
                    id: format!("t{i}"),
                    label,
                    split: if i < n - 3 { Split::Train } else { Split::Val },
                    input: ModelInput {
                        visual: VisualInput::Features(Array2::from_elem((2, 8), label as f64 * 0.5)),
                        tokens: tokenize(words[label], &vocab, 6).unwrap(),
                    },
                }
            })
            .collect();
        PreparedData {
            vocab,
            visual: VisualSource::Features { tokens: 2 },
            samples,
        }
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            d_model: 8,
            n_heads: 2,
            encoder_depths: [1, 1, 1],
            max_len: 6,
            batch_size: 4,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters_and_starts_at_ln3() {
        let data = toy_data(7);
        let config = TrainConfig {
            lr_base: 0.0,
            epochs: 1,
            batch_size: 4,
            ..toy_config()
        };
        let out = train(&config, &data).unwrap();
        let fresh = AdpcModel::new(config.model_config(data.visual, data.vocab.len())).unwrap();
        assert_eq!(out.best.model.params(), fresh.params());
        assert_eq!(out.step_losses.len(), 1);
        assert!((out.step_losses[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = toy_data(11);
        let a = train(&toy_config(), &data).unwrap();
        let b = train(&toy_config(), &data).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.best.model.params(), b.best.model.params());
        let c = train(
            &TrainConfig {
                seed: 5,
                ..toy_config()
            },
            &data,
        )
        .unwrap();
        assert_ne!(a.step_losses, c.step_losses);
    }

    #[test]
    fn history_csv_layout() {
        let data = toy_data(8);
        let out = train(&toy_config(), &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history_csv(&p, &out.history).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,loss,acc,f1,precision,recall,auc,lr");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
