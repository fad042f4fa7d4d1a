// SPDX-License-Identifier: Apache-2.0
//! Linear warmup followed by cosine decay to zero.

use std::f64::consts::PI;

/// Learning rate at `step` of `total_steps`.
///
/// Ramps linearly from 0 to `lr_base` over the first
/// `warmup_ratio * total_steps` steps, then follows
/// `lr_base * 0.5 * (1 + cos(pi * progress))` down to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_base: f64, warmup_ratio: f64) -> f64 {
    if total_steps == 0 {
        return lr_base;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = warmup_ratio * total;
    if step < warmup {
        return lr_base * step / warmup;
    }
    let span = total - warmup;
    if span <= 0.0 {
        return lr_base;
    }
    let progress = (step - warmup) / span;
    lr_base * 0.5 * (1.0 + (PI * progress).cos())
}
