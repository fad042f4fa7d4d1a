// SPDX-License-Identifier: Apache-2.0
use ndarray::Array2;
use rand::Rng;

use super::{xavier_std, NnError, ParamId, ParamKind, ParamStore, Result, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Row-wise softmax of a plain matrix (max-subtracted).
pub fn softmax(scores: &Array2<f64>) -> Result<Array2<f64>> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteInput);
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(scores.clone());
    let y = tape.softmax(x, None);
    Ok(tape.value(y).clone())
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = store.normal(
            format!("{name}.w"),
            ParamKind::Weight,
            (d_in, d_out),
            xavier_std(d_in, d_out),
            rng,
        );
        let b = store.zeros(format!("{name}.b"), ParamKind::Bias, (1, d_out));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let cols = tape.shape(x).1;
        if cols != self.d_in {
            return Err(NnError::ShapeMismatch(format!(
                "linear expects {} inputs, got {cols}",
                self.d_in
            )));
        }
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w);
        Ok(tape.add_row(xw, b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), ParamKind::Norm, (1, d)),
            beta: store.zeros(format!("{name}.beta"), ParamKind::Norm, (1, d)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Output of [`Mha::forward`]: the projected result plus per-head attention weights.
#[derive(Debug, Clone)]
pub struct MhaOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone, Copy)]
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl Mha {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut R) -> Self {
        assert!(
            n_heads > 0 && d.is_multiple_of(n_heads),
            "d_model {d} not divisible by {n_heads} heads"
        );
        Self {
            wq: Linear::register(store, &format!("{name}.q"), d, d, rng),
            wk: Linear::register(store, &format!("{name}.k"), d, d, rng),
            wv: Linear::register(store, &format!("{name}.v"), d, d, rng),
            wo: Linear::register(store, &format!("{name}.o"), d, d, rng),
            n_heads,
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.d_in
    }

    /// Queries come from `query_src`, keys and values from `key_src`/`value_src`.
    /// Keys with `key_mask[j] == false` receive zero weight.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        query_src: Var,
        key_src: Var,
        value_src: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<MhaOutput> {
        let d = self.d_model();
        let (_, dq) = tape.shape(query_src);
        let (nk, dk_) = tape.shape(key_src);
        let (nv, dv) = tape.shape(value_src);
        if dq != d || dk_ != d || dv != d {
            return Err(NnError::ShapeMismatch(format!(
                "attention d_model {d}, got query {dq}, key {dk_}, value {dv}"
            )));
        }
        if nk != nv {
            return Err(NnError::ShapeMismatch(format!("{nk} keys but {nv} values")));
        }
        if let Some(m) = key_mask {
            if m.len() != nk {
                return Err(NnError::ShapeMismatch(format!("key mask {} for {nk} keys", m.len())));
            }
        }

        let q = self.wq.forward(tape, query_src)?;
        let k = self.wk.forward(tape, key_src)?;
        let v = self.wv.forward(tape, value_src)?;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, scale);
            let a = tape.softmax(s, key_mask);
            heads.push(tape.matmul(a, vh));
            weights.push(a);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let out = self.wo.forward(tape, merged)?;
        Ok(MhaOutput { out, weights })
    }
}

/// Two affine maps with GELU in between.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::register(store, &format!("{name}.fc1"), d, hidden, rng),
            fc2: Linear::register(store, &format!("{name}.fc2"), hidden, d, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}

/// Pre-norm transformer encoder block:
/// `x + MHA(LN(x))`, then `+ FFN(LN(.))`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub ln1: LayerNormParams,
    pub attn: Mha,
    pub ln2: LayerNormParams,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut R) -> Self {
        Self {
            ln1: LayerNormParams::register(store, &format!("{name}.ln1"), d),
            attn: Mha::register(store, &format!("{name}.attn"), d, n_heads, rng),
            ln2: LayerNormParams::register(store, &format!("{name}.ln2"), d),
            ffn: FeedForward::register(store, &format!("{name}.ffn"), d, 4 * d, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = self.ln1.forward(tape, x);
        let a = self.attn.forward(tape, h, h, h, mask)?.out;
        let a = tape.dropout(a);
        let x = tape.add(x, a);
        let h = self.ln2.forward(tape, x);
        let f = self.ffn.forward(tape, h)?;
        let f = tape.dropout(f);
        Ok(tape.add(x, f))
    }
}

/// A stack of encoder blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        d: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| EncoderBlock::register(store, &format!("{name}.block{i}"), d, n_heads, rng))
            .collect();
        Self { blocks }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var, mask: Option<&[bool]>) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(tape, x, mask)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn softmax_analytic_cases() {
        let y = softmax(&array![[0.0, 0.0, 0.0]]).unwrap();
        for v in y.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax(&array![[0.0, 3f64.ln()]]).unwrap();
        assert!((y[[0, 0]] - 0.25).abs() < 1e-15 && (y[[0, 1]] - 0.75).abs() < 1e-15);
        let x = random_matrix(3, 5, 1);
        let shifted = &x + 17.5;
        let (a, b) = (softmax(&x).unwrap(), softmax(&shifted).unwrap());
        assert!((a - b).iter().all(|v| v.abs() < 1e-14));
        assert!(matches!(
            softmax(&array![[f64::NAN, 0.0]]),
            Err(NnError::NonFiniteInput)
        ));
    }

    #[test]
    fn mha_output_shape() {
        let mut store = ParamStore::new();
        let mha = Mha::register(&mut store, "mha", 64, 4, &mut rng());
        let mut tape = Tape::new(&store);
        let q = tape.input(random_matrix(4, 64, 2));
        let kv = tape.input(random_matrix(7, 64, 3));
        let out = mha.forward(&mut tape, q, kv, kv, None).unwrap();
        assert_eq!(tape.shape(out.out), (4, 64));
        assert_eq!(out.weights.len(), 4);
        let bad = tape.input(random_matrix(6, 64, 4));
        assert!(matches!(
            mha.forward(&mut tape, q, kv, bad, None),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_query_key_gives_mean_of_values() {
        let d = 8;
        let mut store = ParamStore::new();
        let mha = Mha::register(&mut store, "mha", d, 2, &mut rng());
        for lin in [mha.wq, mha.wk] {
            store.value_mut(lin.w).fill(0.0);
        }
        for lin in [mha.wv, mha.wo] {
            *store.value_mut(lin.w) = Array2::eye(d);
        }
        let mut tape = Tape::new(&store);
        let q = tape.input(random_matrix(3, d, 5));
        let values = random_matrix(5, d, 6);
        let kv = tape.input(values.clone());
        let out = mha.forward(&mut tape, q, kv, kv, None).unwrap();
        let mean = values.mean_axis(ndarray::Axis(0)).unwrap();
        for row in tape.value(out.out).rows() {
            assert!((&row - &mean).iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let d = 8;
        let mut store = ParamStore::new();
        let mha = Mha::register(&mut store, "mha", d, 2, &mut rng());
        let mut tape = Tape::new(&store);
        let x = tape.input(random_matrix(5, d, 8));
        let mask = [true, true, false, true, false];
        let out = mha.forward(&mut tape, x, x, x, Some(&mask)).unwrap();
        for &a in &out.weights {
            let w = tape.value(a);
            for row in w.rows() {
                assert_eq!(row[2], 0.0);
                assert_eq!(row[4], 0.0);
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_contract() {
        let mut store = ParamStore::new();
        let ln = LayerNormParams::register(&mut store, "ln", 6);
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[2.0, 2.0, 2.0, 2.0, 2.0, 2.0], [1.0, -3.0, 0.5, 9.0, 2.0, -4.0]]);
        let y = ln.forward(&mut tape, x);
        let y = tape.value(y);
        assert!(y.row(0).iter().all(|v| v.abs() < 1e-12));
        let row = y.row(1);
        let mean = row.sum() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn encoder_block_shape_and_zero_identity() {
        let mut store = ParamStore::new();
        let block = EncoderBlock::register(&mut store, "blk", 64, 4, &mut rng());
        let input = random_matrix(10, 64, 9);
        {
            let mut tape = Tape::new(&store);
            let x = tape.input(input.clone());
            let y = block.forward(&mut tape, x, None).unwrap();
            assert_eq!(tape.shape(y), (10, 64));
        }
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            store.value_mut(id).fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.input(input.clone());
        let y = block.forward(&mut tape, x, None).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn attention_is_permutation_equivariant_over_queries() {
        let d = 8;
        let mut store = ParamStore::new();
        let mha = Mha::register(&mut store, "mha", d, 2, &mut rng());
        let qv = random_matrix(4, d, 10);
        let perm = [2usize, 0, 3, 1];
        let qp = qv.select(ndarray::Axis(0), &perm);
        let kv = random_matrix(6, d, 11);
        let mut tape = Tape::new(&store);
        let (q1, q2, k) = (tape.input(qv), tape.input(qp), tape.input(kv));
        let a = mha.forward(&mut tape, q1, k, k, None).unwrap().out;
        let b = mha.forward(&mut tape, q2, k, k, None).unwrap().out;
        let a_perm = tape.value(a).select(ndarray::Axis(0), &perm);
        assert!((a_perm - tape.value(b)).iter().all(|v| v.abs() < 1e-13));
    }
}
