// SPDX-License-Identifier: Apache-2.0
//! Paired full vs. fusion-free training runs over several seeds.

use serde::{Deserialize, Serialize};

use super::{evaluate, train, MetricsReport, PreparedData, Result, Split, TrainConfig, TrainError};
use crate::model::Ablation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub ablation: Ablation,
    pub param_count: usize,
    pub best_epoch: usize,
    /// Validation split (same confounding as training).
    pub val: MetricsReport,
    /// Test split (shifted confounding).
    pub test: MetricsReport,
}

/// `full - ablated` for each headline metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

impl MetricDeltas {
    pub fn between(full: &MetricsReport, ablated: &MetricsReport) -> Self {
        Self {
            acc: full.acc - ablated.acc,
            f1: full.f1 - ablated.f1,
            precision: full.precision - ablated.precision,
            recall: full.recall - ablated.recall,
            auc: full.auc.zip(ablated.auc).map(|(a, b)| a - b),
        }
    }

    fn mean(items: &[MetricDeltas]) -> Self {
        let n = items.len() as f64;
        let avg = |f: fn(&MetricDeltas) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            acc: avg(|d| d.acc),
            f1: avg(|d| d.f1),
            precision: avg(|d| d.precision),
            recall: avg(|d| d.recall),
            auc: items
                .iter()
                .map(|d| d.auc)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub full: ArmResult,
    pub ablated: ArmResult,
    pub delta_val: MetricDeltas,
    pub delta_test: MetricDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<SeedRun>,
    pub mean_delta_val: MetricDeltas,
    pub mean_delta_test: MetricDeltas,
}

fn arm(config: &TrainConfig, data: &PreparedData, ablation: Ablation, seed: u64) -> Result<ArmResult> {
    let config = TrainConfig {
        ablation,
        seed,
        ..config.clone()
    };
    let out = train(&config, data)?;
    let model = &out.best.model;
    let val = data.split(Split::Val);
    let test = data.split(Split::Test);
    if val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    Ok(ArmResult {
        ablation,
        param_count: model.params().scalar_count(),
        best_epoch: out.best_epoch,
        val: evaluate(model, &val)?,
        test: evaluate(model, &test)?,
    })
}

/// Trains both arms with identical data and seed, once per seed.
pub fn run_ablation(config: &TrainConfig, data: &PreparedData, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let full = arm(config, data, Ablation::Full, seed)?;
        let ablated = arm(config, data, Ablation::NoCfFda, seed)?;
        runs.push(SeedRun {
            seed,
            delta_val: MetricDeltas::between(&full.val, &ablated.val),
            delta_test: MetricDeltas::between(&full.test, &ablated.test),
            full,
            ablated,
        });
    }
    let mean_delta_val = MetricDeltas::mean(&runs.iter().map(|r| r.delta_val).collect::<Vec<_>>());
    let mean_delta_test = MetricDeltas::mean(&runs.iter().map(|r| r.delta_test).collect::<Vec<_>>());
    Ok(AblationReport {
        runs,
        mean_delta_val,
        mean_delta_test,
    })
}
