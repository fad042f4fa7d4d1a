// SPDX-License-Identifier: Apache-2.0
//! Shared helpers for the integration suites.

#![allow(dead_code)]

pub mod grad_suite;
pub mod graphs;
pub mod norm_suite;
pub mod oracles;

use adpc_core::nn::{Gradients, ParamId, ParamKind, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const FD_FLOOR: f64 = 1e-5;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Registers a random matrix as a trainable leaf so gradients reach it.
pub fn input_leaf(store: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> ParamId {
    store.add(name, ParamKind::Bias, random_matrix(rows, cols, seed))
}

#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// This many uniformly drawn (param, entry) pairs.
    Sample(usize, u64),
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= FD_REL_TOL
    }
}

fn weights_for(shape: (usize, usize)) -> Array2<f64> {
    random_matrix(shape.0, shape.1, 0xfd_0517 + (shape.0 * 131 + shape.1) as u64)
}

fn objective(store: &ParamStore, build: &impl Fn(&mut Tape<'_>) -> Var) -> f64 {
    let mut tape = Tape::new(store);
    let out = build(&mut tape);
    let w = weights_for(tape.shape(out));
    (tape.value(out) * &w).sum()
}

/// Compares reverse-mode gradients of `sum(R * build(params))` (R a fixed
/// random matrix) against central differences with step [`FD_STEP`].
pub fn check_gradients(store: &ParamStore, coords: Coords, build: impl Fn(&mut Tape<'_>) -> Var) -> GradCheck {
    let mut tape = Tape::new(store);
    let out = build(&mut tape);
    let w = weights_for(tape.shape(out));
    let node_grads = tape.backward_with(out, w);
    let mut grads = Gradients::zeros_like(store);
    tape.collect_param_grads(&node_grads, &mut grads);

    let entries: Vec<(ParamId, usize, usize)> = {
        let all: Vec<(ParamId, usize, usize)> = store
            .iter()
            .flat_map(|(id, p)| {
                let (r, c) = p.value.dim();
                (0..r).flat_map(move |i| (0..c).map(move |j| (id, i, j)))
            })
            .collect();
        match coords {
            Coords::All => all,
            Coords::Sample(n, seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n.min(all.len()))
                    .map(|_| all[rng.random_range(0..all.len())])
                    .collect()
            }
        }
    };

    let mut worst = (0.0, String::new());
    let mut probe = store.clone();
    for &(id, i, j) in &entries {
        let original = probe.value(id)[[i, j]];
        probe.value_mut(id)[[i, j]] = original + FD_STEP;
        let up = objective(&probe, &build);
        probe.value_mut(id)[[i, j]] = original - FD_STEP;
        let down = objective(&probe, &build);
        probe.value_mut(id)[[i, j]] = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.get(id)[[i, j]];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (
                rel,
                format!(
                    "{}[{i},{j}] analytic {analytic:.6e} numeric {numeric:.6e}",
                    store.get(id).name
                ),
            );
        }
    }
    GradCheck {
        max_rel_err: worst.0,
        worst: worst.1,
        checked: entries.len(),
    }
}

/// Maximum deviation of any row sum from 1.
pub fn row_stochastic_error(m: &Array2<f64>) -> f64 {
    m.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}
