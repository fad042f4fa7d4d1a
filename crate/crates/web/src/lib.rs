// SPDX-License-Identifier: Apache-2.0
//! Browser bindings for three small interactive views: front-door
//! adjustment against the interventional ground truth, the learning-rate
//! schedule, and the attention maps of a freshly initialised model.
//!
//! Every export returns JSON text so the page needs no generated glue types.

use adpc_core::fusion::cf_forward;
use adpc_core::model::{AdpcModel, ModelConfig, ModelInput, VisualInput, VisualSource};
use adpc_core::nn::Tape;
use adpc_core::scm::frontdoor_example;
use adpc_core::text::{tokenize, Vocabulary};
use adpc_core::train::cosine_lr;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Debug, Serialize)]
pub struct EffectRow {
    pub x: usize,
    /// `P(Y=1 | X=x)`, the confounded association.
    pub observational: f64,
    pub frontdoor: f64,
    pub backdoor: f64,
    /// `P(Y=1 | do(X=x))` from the mutilated model.
    pub truth: f64,
}

#[derive(Debug, Serialize)]
pub struct EffectReport {
    pub rows: Vec<EffectRow>,
    pub ate_observational: f64,
    pub ate_frontdoor: f64,
    pub ate_truth: f64,
    pub max_abs_diff_frontdoor: f64,
}

/// Front-door and back-door estimates for the binary `S -> X -> M -> Y`,
/// `S -> Y` model. `p_y` is ordered `(m,s) = 00, 01, 10, 11`.
pub fn effects(p_s: f64, p_x: [f64; 2], p_m: [f64; 2], p_y: [f64; 4]) -> Result<EffectReport, String> {
    for p in [p_s].iter().chain(&p_x).chain(&p_m).chain(&p_y) {
        if !(0.0..=1.0).contains(p) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
    }
    let scm = frontdoor_example(p_s, p_x, p_m, p_y).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(2);
    for x in 0..2 {
        let fd = scm.frontdoor_adjust("Y", "X", x, "M").map_err(|e| e.to_string())?;
        let bd = scm.backdoor_adjust("Y", "X", x, &["S"]).map_err(|e| e.to_string())?;
        let truth = scm.interventional_oracle("Y", "X", x).map_err(|e| e.to_string())?;
        let obs = scm.conditional("Y", &[("X", x)]).map_err(|e| e.to_string())?;
        rows.push(EffectRow {
            x,
            observational: obs.prob(1),
            frontdoor: fd.prob(1),
            backdoor: bd.prob(1),
            truth: truth.prob(1),
        });
    }
    let diff = |f: fn(&EffectRow) -> f64| f(&rows[1]) - f(&rows[0]);
    Ok(EffectReport {
        ate_observational: diff(|r| r.observational),
        ate_frontdoor: diff(|r| r.frontdoor),
        ate_truth: diff(|r| r.truth),
        max_abs_diff_frontdoor: rows.iter().map(|r| (r.frontdoor - r.truth).abs()).fold(0.0, f64::max),
        rows,
    })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn frontdoor_effects(
    p_s: f64,
    p_x0: f64,
    p_x1: f64,
    p_m0: f64,
    p_m1: f64,
    p_y00: f64,
    p_y01: f64,
    p_y10: f64,
    p_y11: f64,
) -> Result<String, JsError> {
    effects(p_s, [p_x0, p_x1], [p_m0, p_m1], [p_y00, p_y01, p_y10, p_y11])
        .map(|r| to_js(&r))
        .map_err(err)
}

/// Per-step learning rate for `total_steps` steps.
pub fn schedule(total_steps: usize, lr_base: f64, warmup_ratio: f64) -> Result<Vec<f64>, String> {
    if total_steps == 0 || total_steps > 100_000 {
        return Err(format!("total_steps must be in 1..=100000, got {total_steps}"));
    }
    if !(0.0..1.0).contains(&warmup_ratio) || !(lr_base > 0.0) {
        return Err("need lr_base > 0 and warmup_ratio in [0, 1)".into());
    }
    Ok((0..=total_steps)
        .map(|k| cosine_lr(k, total_steps, lr_base, warmup_ratio))
        .collect())
}

#[wasm_bindgen]
pub fn lr_schedule(total_steps: usize, lr_base: f64, warmup_ratio: f64) -> Result<String, JsError> {
    schedule(total_steps, lr_base, warmup_ratio)
        .map(|v| to_js(&v))
        .map_err(err)
}

#[derive(Debug, Serialize)]
pub struct AttentionMaps {
    /// Row labels: visual tokens `v0..` then the text tokens.
    pub tokens: Vec<String>,
    pub caam_causal: Vec<Vec<f64>>,
    pub caam_confounder: Vec<Vec<f64>>,
    pub fda_mdo: Vec<Vec<f64>>,
    pub fda_out: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

const D_MODEL: usize = 16;
const MAX_TEXT: usize = 24;

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// CaaM and front-door attention of an untrained depth-1 model on `text`
/// plus `n_visual` random visual tokens.
pub fn attention(text: &str, n_visual: usize, seed: u64) -> Result<AttentionMaps, String> {
    if !(1..=16).contains(&n_visual) {
        return Err(format!("n_visual must be in 1..=16, got {n_visual}"));
    }
    if text.trim().is_empty() {
        return Err("text is empty".into());
    }
    let vocab = Vocabulary::build(&[text], 1, 256).map_err(|e| e.to_string())?;
    let probe = tokenize(text, &vocab, MAX_TEXT).map_err(|e| e.to_string())?;
    let used = probe.attention_mask.iter().filter(|&&m| m).count().max(2);
    let tokens = tokenize(text, &vocab, used).map_err(|e| e.to_string())?;

    let config = ModelConfig {
        d_model: D_MODEL,
        n_heads: 2,
        visual_depth: 1,
        text_depth: 1,
        multimodal_depth: 1,
        visual: VisualSource::Features { tokens: n_visual },
        vocab_size: vocab.len(),
        max_len: used,
        init_seed: seed,
        ..ModelConfig::default()
    };
    let model = AdpcModel::new(config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let features = Array2::from_shape_simple_fn((n_visual, D_MODEL), || rng.random_range(-1.0..1.0));
    let labels: Vec<String> = (0..n_visual)
        .map(|i| format!("v{i}"))
        .chain(tokens.ids.iter().map(|&id| vocab.token(id).unwrap_or("?").to_string()))
        .collect();
    let input = ModelInput {
        visual: VisualInput::Features(features),
        tokens,
    };

    let mut tape = Tape::new(model.params());
    let trace = model.forward(&mut tape, &input).map_err(|e| e.to_string())?;
    let cf = model.cf_params().ok_or("model has no fusion stage")?;
    let cf = cf_forward(&mut tape, &trace.fv, &trace.ft, cf).map_err(|e| e.to_string())?;
    Ok(AttentionMaps {
        tokens: labels,
        caam_causal: rows(tape.value(cf.caam.causal_weights)),
        caam_confounder: rows(tape.value(cf.caam.confounder_weights)),
        fda_mdo: rows(tape.value(trace.fda_weights[0])),
        fda_out: rows(tape.value(trace.fda_weights[1])),
        logits: tape.value(trace.logits).iter().copied().collect(),
    })
}

#[wasm_bindgen]
pub fn attention_maps(text: &str, n_visual: usize, seed: u32) -> Result<String, JsError> {
    attention(text, n_visual, u64::from(seed))
        .map(|m| to_js(&m))
        .map_err(err)
}
