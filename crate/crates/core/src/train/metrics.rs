// SPDX-License-Identifier: Apache-2.0
//! Classification metrics: accuracy, macro precision/recall/F1 and AUC.
//!
//! Precision, recall and F1 use zero for undefined ratios. AUC is the
//! Mann-Whitney statistic with ties counted as one half; for three classes it
//! is the one-vs-rest macro mean and is absent when any class has no
//! positives or no negatives.

use serde::{Deserialize, Serialize};

use super::class_names;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mann-Whitney AUC of `scores` for the positive set; `None` without both
/// positives and negatives.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(positive.len(), scores.len());
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks over tied groups.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&k| positive[k]).map(|k| ranks[k]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Metrics from true labels and per-sample class probabilities.
/// Predictions are the argmax, lowest index on ties.
pub fn compute_metrics(labels: &[usize], probs: &[Vec<f64>], n_classes: usize) -> MetricsReport {
    assert_eq!(labels.len(), probs.len());
    let n = labels.len();
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&y, p) in labels.iter().zip(probs) {
        confusion[y][argmax(p)] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let names = class_names(n_classes);

    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..n_classes).map(|r| confusion[r][c]).sum();
        let support: usize = confusion[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        per_class.push(ClassMetrics {
            class: names.get(c).map_or_else(|| c.to_string(), |s| s.to_string()),
            precision,
            recall,
            f1,
            support,
            auc: binary_auc(&positive, &scores),
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n_classes as f64;
    let auc = if n_classes == 2 {
        per_class[1].auc
    } else {
        per_class
            .iter()
            .map(|c| c.auc)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    MetricsReport {
        acc: ratio(correct, n),
        f1: mean(|c| c.f1),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        auc,
        per_class,
        confusion,
        n_samples: n,
    }
}
