// SPDX-License-Identifier: Apache-2.0
//! Cross-modal causal fusion: produces the mediator from visual and textual
//! token features.
//!
//! 1. Bidirectional cross-attention, each direction scaled by a learned gain:
//!    `f_vtt = alpha * MHA(q = fv, kv = ft)`, `f_tvv = beta * MHA(q = ft, kv = fv)`.
//! 2. Token-axis concatenation `f_cm = f_vtt ++ f_tvv`.
//! 3. Causal-aware dual attention over `f_cm`: one set of scores `s`, a causal
//!    map `softmax(s)` and a confounder map `softmax(-s)`, combined as
//!    `x + causal(x) - lambda * confounder(x)`.
//! 4. Layer norm, giving the mediator `M`.

use rand::Rng;

use crate::nn::{
    concat_masks, FeatureVar, LayerNormParams, Linear, Mha, NnError, ParamId, ParamKind, ParamStore, Result, Tape, Var,
};

/// Dual-branch attention with shared query/key/value projections.
#[derive(Debug, Clone, Copy)]
pub struct CaamParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub out_causal: Linear,
    pub out_confounder: Linear,
    /// Mixing coefficient, clamped to `[0, 1]` whenever it is read.
    pub lambda: ParamId,
}

impl CaamParams {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d: usize, lambda_init: f64, rng: &mut R) -> Self {
        let lambda = store.add(
            format!("{name}.lambda"),
            ParamKind::Gain,
            ndarray::Array2::from_elem((1, 1), lambda_init),
        );
        Self {
            wq: Linear::register(store, &format!("{name}.q"), d, d, rng),
            wk: Linear::register(store, &format!("{name}.k"), d, d, rng),
            wv: Linear::register(store, &format!("{name}.v"), d, d, rng),
            out_causal: Linear::register(store, &format!("{name}.out_causal"), d, d, rng),
            out_confounder: Linear::register(store, &format!("{name}.out_confounder"), d, d, rng),
            lambda,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CfParams {
    pub v2t: Mha,
    pub t2v: Mha,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub caam: CaamParams,
    pub ln: LayerNormParams,
}

impl CfParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        lambda_init: f64,
        rng: &mut R,
    ) -> Self {
        let one = || ndarray::Array2::from_elem((1, 1), 1.0);
        Self {
            v2t: Mha::register(store, &format!("{name}.v2t"), d, n_heads, rng),
            t2v: Mha::register(store, &format!("{name}.t2v"), d, n_heads, rng),
            alpha: store.add(format!("{name}.alpha"), ParamKind::Gain, one()),
            beta: store.add(format!("{name}.beta"), ParamKind::Gain, one()),
            caam: CaamParams::register(store, &format!("{name}.caam"), d, lambda_init, rng),
            ln: LayerNormParams::register(store, &format!("{name}.ln"), d),
        }
    }
}

/// `f_vtt` (visual-token count rows) and `f_tvv` (text-token count rows).
#[derive(Debug, Clone)]
pub struct CrossAttended {
    pub f_vtt: FeatureVar,
    pub f_tvv: FeatureVar,
}

pub fn cross_attend(tape: &mut Tape<'_>, fv: &FeatureVar, ft: &FeatureVar, params: &CfParams) -> Result<CrossAttended> {
    let (dv, dt) = (tape.shape(fv.var).1, tape.shape(ft.var).1);
    if dv != dt {
        return Err(NnError::ShapeMismatch(format!("visual d_model {dv} vs text {dt}")));
    }
    let vtt = params.v2t.forward(tape, fv.var, ft.var, ft.var, ft.mask())?.out;
    let alpha = tape.param(params.alpha);
    let vtt = tape.scale_by(vtt, alpha);
    let tvv = params.t2v.forward(tape, ft.var, fv.var, fv.var, fv.mask())?.out;
    let beta = tape.param(params.beta);
    let tvv = tape.scale_by(tvv, beta);
    Ok(CrossAttended {
        f_vtt: FeatureVar::new(vtt, fv.mask.clone()),
        f_tvv: FeatureVar::new(tvv, ft.mask.clone()),
    })
}

/// Token-axis concatenation, `f_vtt` rows first. Masks follow the same order.
pub fn fuse_concat(tape: &mut Tape<'_>, f_vtt: &FeatureVar, f_tvv: &FeatureVar) -> Result<FeatureVar> {
    let (na, da) = tape.shape(f_vtt.var);
    let (nb, db) = tape.shape(f_tvv.var);
    if da != db {
        return Err(NnError::ShapeMismatch(format!(
            "cannot concatenate widths {da} and {db}"
        )));
    }
    let var = tape.concat_rows(f_vtt.var, f_tvv.var);
    Ok(FeatureVar::new(var, concat_masks(f_vtt.mask(), na, f_tvv.mask(), nb)))
}

#[derive(Debug, Clone)]
pub struct CaamOutput {
    pub out: FeatureVar,
    pub causal_weights: Var,
    pub confounder_weights: Var,
}

pub fn caam_forward(tape: &mut Tape<'_>, x: &FeatureVar, params: &CaamParams) -> Result<CaamOutput> {
    let (n, d) = tape.shape(x.var);
    if d != params.wq.d_in {
        return Err(NnError::ShapeMismatch(format!(
            "CaaM expects width {}, got {d}",
            params.wq.d_in
        )));
    }
    if x.mask().is_some_and(|m| m.len() != n) {
        return Err(NnError::ShapeMismatch("CaaM mask length".into()));
    }
    let q = params.wq.forward(tape, x.var)?;
    let k = params.wk.forward(tape, x.var)?;
    let v = params.wv.forward(tape, x.var)?;
    let s = tape.matmul_t(q, k);
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let causal_weights = tape.softmax(s, x.mask());
    let neg = tape.neg(s);
    let confounder_weights = tape.softmax(neg, x.mask());

    let causal = tape.matmul(causal_weights, v);
    let causal = params.out_causal.forward(tape, causal)?;
    let confounder = tape.matmul(confounder_weights, v);
    let confounder = params.out_confounder.forward(tape, confounder)?;
    let lambda = tape.param(params.lambda);
    let lambda = tape.clamp(lambda, 0.0, 1.0);
    let confounder = tape.scale_by(confounder, lambda);
    let mixed = tape.sub(causal, confounder);
    let out = tape.add(x.var, mixed);
    Ok(CaamOutput {
        out: FeatureVar::new(out, x.mask.clone()),
        causal_weights,
        confounder_weights,
    })
}

/// Intermediate products of [`cf_forward`], kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct CfTrace {
    pub cross: CrossAttended,
    pub f_cm: FeatureVar,
    pub caam: CaamOutput,
    pub mediator: FeatureVar,
}

/// `M = LN(CaaM(f_vtt ++ f_tvv))`.
pub fn cf_forward(tape: &mut Tape<'_>, fv: &FeatureVar, ft: &FeatureVar, params: &CfParams) -> Result<CfTrace> {
    let cross = cross_attend(tape, fv, ft, params)?;
    let f_cm = fuse_concat(tape, &cross.f_vtt, &cross.f_tvv)?;
    let caam = caam_forward(tape, &f_cm, &params.caam)?;
    let m = params.ln.forward(tape, caam.out.var);
    let mediator = FeatureVar::new(m, f_cm.mask.clone());
    Ok(CfTrace {
        cross,
        f_cm,
        caam,
        mediator,
    })
}
