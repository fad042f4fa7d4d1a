// SPDX-License-Identifier: Apache-2.0
//! Reference computations for the optimizer and the metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct AdamRef {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Scalar AdamW written out with explicit powers of the betas.
pub fn adamw_recurrence(theta0: f64, lrs: &[f64], grad: impl Fn(f64) -> f64, decays: bool, c: &AdamRef) -> Vec<f64> {
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::with_capacity(lrs.len());
    for (k, &lr) in lrs.iter().enumerate() {
        let t = (k + 1) as i32;
        let g = grad(theta);
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g * g;
        let m_hat = m / (1.0 - c.beta1.powi(t));
        let v_hat = v / (1.0 - c.beta2.powi(t));
        if decays {
            theta -= lr * c.weight_decay * theta;
        }
        theta -= lr * m_hat / (v_hat.sqrt() + c.eps);
        out.push(theta);
    }
    out
}

/// With a constant gradient `g` the bias-corrected moments are exactly `g`
/// and `g^2`, so each step moves by `lr * g / (|g| + eps)` after decay.
pub fn adamw_constant_gradient(theta0: f64, lrs: &[f64], g: f64, decays: bool, c: &AdamRef) -> Vec<f64> {
    let mut theta = theta0;
    lrs.iter()
        .map(|&lr| {
            let shrink = if decays { 1.0 - lr * c.weight_decay } else { 1.0 };
            theta = theta * shrink - lr * g / (g.abs() + c.eps);
            theta
        })
        .collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// (acc, macro F1, macro precision, macro recall) from an explicit confusion
/// matrix; undefined ratios count as 0.
pub fn confusion_oracle(labels: &[usize], preds: &[usize], k: usize) -> (f64, f64, f64, f64) {
    let mut cm = vec![vec![0usize; k]; k];
    for (&l, &p) in labels.iter().zip(preds) {
        cm[l][p] += 1;
    }
    let n = labels.len() as f64;
    let trace: usize = (0..k).map(|i| cm[i][i]).sum();
    let (mut f1, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
        let actual: usize = cm[c].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prec += p;
        rec += r;
        f1 += f;
    }
    let kf = k as f64;
    (trace as f64 / n, f1 / kf, prec / kf, rec / kf)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn pair_count_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let (mut good, mut pairs) = (0.0, 0usize);
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                good += 1.0;
            } else if scores[i] == scores[j] {
                good += 0.5;
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// Random labels and probability rows. Scores are quantized so ties occur.
pub fn random_prediction_set(seed: u64, k: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..30);
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1..8) as f64).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    (labels, probs)
}
