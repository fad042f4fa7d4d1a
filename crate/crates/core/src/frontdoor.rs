// SPDX-License-Identifier: Apache-2.0
//! Neural front-door adjustment and the classifier head.
//!
//! With `F` the multi-modal features and `M` the mediator (same token count):
//!
//! ```text
//! M_do = softmax(F M^T / sqrt(d)) F      (value matrix switchable to M)
//! out  = softmax(F M_do^T / sqrt(d)) M
//! ```
//!
//! Softmax runs over the last axis, and `d` is the full model width
//! (single-head form).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{concat_masks, FeatureVar, Linear, NnError, ParamStore, Result, Tape, Var};

/// Value matrix used in the `M_do` product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Eq8Values {
    /// `softmax(F M^T) F`, the literal form.
    #[default]
    F,
    /// `softmax(F M^T) M`, the conventional query/key/value reading.
    M,
}

/// Token-axis concatenation `F = fv ++ ft`.
pub fn concat_multimodal(tape: &mut Tape<'_>, fv: &FeatureVar, ft: &FeatureVar) -> Result<FeatureVar> {
    let (nv, dv) = tape.shape(fv.var);
    let (nt, dt) = tape.shape(ft.var);
    if dv != dt {
        return Err(NnError::ShapeMismatch(format!("visual width {dv} vs text width {dt}")));
    }
    let var = tape.concat_rows(fv.var, ft.var);
    Ok(FeatureVar::new(var, concat_masks(fv.mask(), nv, ft.mask(), nt)))
}

/// Result of one attention product, with its mixing matrix.
#[derive(Debug, Clone)]
pub struct FdaStage {
    pub out: FeatureVar,
    pub weights: Var,
}

fn check_pair(tape: &Tape<'_>, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(NnError::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
    }
    Ok(sa)
}

/// `M_do = softmax(F M^T / sqrt(d)) V` with `V = F` (default) or `V = M`.
pub fn fda_mdo(tape: &mut Tape<'_>, f: &FeatureVar, m: &FeatureVar, values: Eq8Values) -> Result<FdaStage> {
    check_pair(tape, f.var, m.var, "fda_mdo F vs M")?;
    let d = tape.shape(f.var).1;
    let s = tape.matmul_t(f.var, m.var);
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(s, m.mask());
    let v = match values {
        Eq8Values::F => f.var,
        Eq8Values::M => m.var,
    };
    let out = tape.matmul(weights, v);
    Ok(FdaStage {
        out: FeatureVar::new(out, f.mask.clone()),
        weights,
    })
}

/// `out = softmax(F M_do^T / sqrt(d)) M`.
pub fn fda_out(tape: &mut Tape<'_>, f: &FeatureVar, m: &FeatureVar, m_do: &FeatureVar) -> Result<FdaStage> {
    check_pair(tape, f.var, m.var, "fda_out F vs M")?;
    check_pair(tape, f.var, m_do.var, "fda_out F vs M_do")?;
    let d = tape.shape(f.var).1;
    let s = tape.matmul_t(f.var, m_do.var);
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(s, m_do.mask());
    let out = tape.matmul(weights, m.var);
    Ok(FdaStage {
        out: FeatureVar::new(out, f.mask.clone()),
        weights,
    })
}

/// Masked mean pooling followed by one affine map to class logits.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    /// The affine map starts at zero, so initial logits are uniform.
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d: usize, n_classes: usize, rng: &mut R) -> Self {
        let linear = Linear::register(store, name, d, n_classes, rng);
        store.value_mut(linear.w).fill(0.0);
        Self { linear }
    }
}

/// Pooled features and logits.
#[derive(Debug, Clone, Copy)]
pub struct Classified {
    pub pooled: Var,
    pub logits: Var,
}

pub fn classify(tape: &mut Tape<'_>, features: &FeatureVar, head: &ClassifierHead) -> Result<Classified> {
    let n = tape.shape(features.var).0;
    let mask = features.mask_or_all(n);
    if mask.len() != n {
        return Err(NnError::ShapeMismatch("pool mask length".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(NnError::AllTokensMasked);
    }
    let pooled = tape.masked_mean(features.var, &mask);
    let logits = head.linear.forward(tape, pooled)?;
    Ok(Classified { pooled, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn concat_keeps_visual_rows_first() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let fv = FeatureVar::new(tape.input(random(64, 8, 1)), None);
        let ft = FeatureVar::new(tape.input(random(16, 8, 2)), Some(vec![true; 16]));
        let f = concat_multimodal(&mut tape, &fv, &ft).unwrap();
        assert_eq!(tape.shape(f.var), (80, 8));
        assert_eq!(tape.value(f.var).row(0), tape.value(fv.var).row(0));
        assert_eq!(f.mask.unwrap().len(), 80);
    }

    #[test]
    fn identical_rows_are_fixed_points() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let row = random(1, 6, 3);
        let fmat = Array2::from_shape_fn((5, 6), |(_, j)| row[[0, j]]);
        let f = FeatureVar::new(tape.input(fmat.clone()), None);
        let m = FeatureVar::new(tape.input(random(5, 6, 4)), None);
        let mdo = fda_mdo(&mut tape, &f, &m, Eq8Values::F).unwrap();
        assert!((tape.value(mdo.out.var) - &fmat).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn single_token_passes_through() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let f = FeatureVar::new(tape.input(random(1, 4, 5)), None);
        let m = FeatureVar::new(tape.input(random(1, 4, 6)), None);
        let mdo = fda_mdo(&mut tape, &f, &m, Eq8Values::F).unwrap();
        assert_eq!(tape.value(mdo.out.var), tape.value(f.var));
        let out = fda_out(&mut tape, &f, &m, &mdo.out).unwrap();
        assert_eq!(tape.value(out.out.var), tape.value(m.var));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let f = FeatureVar::new(tape.input(random(7, 4, 7) * 5.0), None);
        let m = FeatureVar::new(tape.input(random(7, 4, 8) * 5.0), None);
        let mdo = fda_mdo(&mut tape, &f, &m, Eq8Values::M).unwrap();
        let out = fda_out(&mut tape, &f, &m, &mdo.out).unwrap();
        for w in [mdo.weights, out.weights] {
            for s in tape.value(w).sum_axis(Axis(1)) {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let bad = FeatureVar::new(tape.input(random(6, 4, 9)), None);
        assert!(fda_mdo(&mut tape, &f, &bad, Eq8Values::F).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut store = ParamStore::new();
        let head = ClassifierHead::register(&mut store, "head", 4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::new(&store);
        let x = FeatureVar::new(tape.input(random(5, 4, 10)), Some(vec![true, true, false, true, false]));
        let c = classify(&mut tape, &x, &head).unwrap();
        assert!(tape.value(c.logits).iter().all(|&v| v == 0.0));
        let loss = tape.cross_entropy(c.logits, 1);
        assert!((tape.scalar(loss) - 3f64.ln()).abs() < 1e-15);

        let none = FeatureVar::new(x.var, Some(vec![false; 5]));
        assert!(matches!(
            classify(&mut tape, &none, &head),
            Err(NnError::AllTokensMasked)
        ));
    }

    #[test]
    fn logit_shift_keeps_argmax_and_gradient() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = random(1, 3, 12);
        let a = tape.input(z.clone());
        let b = tape.input(&z + 4.2);
        let la = tape.cross_entropy(a, 2);
        let lb = tape.cross_entropy(b, 2);
        let ga = tape.backward(la).get(a).unwrap().clone();
        let gb = tape.backward(lb).get(b).unwrap().clone();
        assert!((ga - gb).iter().all(|v| v.abs() < 1e-14));
        let argmax = |m: &Array2<f64>| m.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(argmax(&z), argmax(&(&z + 4.2)));
    }
}
