// SPDX-License-Identifier: Apache-2.0
//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves
//! borrow their values from a [`ParamStore`]; everything else is owned by the
//! tape. [`Tape::backward`] walks the record in reverse and returns the
//! gradient of every node, from which parameter gradients are collected.
//!
//! Row vectors (`1 x d`) play the role of biases and `1 x 1` matrices the
//! role of scalars.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Matrix times a `1 x 1` variable.
    ScaleBy(Var, Var),
    Clamp(Var, f64, f64),
    Neg(Var),
    /// Row-wise softmax; output is cached as the node value.
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Gather(Var, Vec<usize>),
    MaskedMean(Var, Vec<bool>),
    MulConst(Var, Array2<f64>),
    Sum(Var),
    CrossEntropy(Var, usize),
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct NodeGrads {
    grads: Vec<Option<Array2<f64>>>,
}

impl NodeGrads {
    /// Gradient w.r.t. a leaf (input or parameter node); `None` if the root
    /// does not depend on it. Interior-node gradients are released during
    /// the sweep.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn softmax_rows(x: &Array2<f64>, key_mask: Option<&[bool]>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let allowed = |j: usize| key_mask.is_none_or(|m| m[j]);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| allowed(j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut z = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v = if allowed(j) { (*v - max).exp() } else { 0.0 };
            z += *v;
        }
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            dropout: None,
        }
    }

    /// Enables inverted dropout with rate `p` drawn from `rng`.
    pub fn with_dropout(mut self, p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.value(id)),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1 x d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// Multiplies `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let v = self.value(a) * self.scalar(s);
        self.push(v, Op::ScaleBy(a, s))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, Op::Neg(a))
    }

    /// Row-wise softmax. Columns with `key_mask[j] == false` get weight exactly 0.
    pub fn softmax(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        if let Some(m) = key_mask {
            assert_eq!(m.len(), self.shape(a).1, "key mask width");
        }
        let v = softmax_rows(self.value(a), key_mask);
        self.push(v, Op::Softmax(a))
    }

    /// Per-row normalization with learned `1 x d` affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let v = concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), ids);
        self.push(v, Op::Gather(table, ids.to_vec()))
    }

    /// `1 x d` mean over rows where `mask` is true.
    pub fn masked_mean(&mut self, a: Var, mask: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.nrows(), "pool mask length");
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "masked_mean over zero rows");
        let mut out = Array2::zeros((1, x.ncols()));
        for (row, _) in x.rows().into_iter().zip(mask).filter(|(_, &m)| m) {
            out.row_mut(0).scaled_add(1.0 / count as f64, &row);
        }
        self.push(out, Op::MaskedMean(a, mask.to_vec()))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    /// Inverted dropout; identity when dropout is disabled.
    pub fn dropout(&mut self, a: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return a;
        };
        let keep = 1.0 - *p;
        let (r, c) = self.nodes[a.0].value.dim();
        let mask = Array2::from_shape_simple_fn((r, c), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.mul_const(a, mask)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Cross-entropy of `1 x C` logits against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), 1, "cross_entropy expects a single row");
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let v = Array2::from_elem((1, 1), lse - z[[0, label]]);
        self.push(v, Op::CrossEntropy(logits, label))
    }

    /// Backpropagates from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> NodeGrads {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        self.backward_with(root, Array2::ones((1, 1)))
    }

    /// Backpropagates an explicit upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Array2<f64>) -> NodeGrads {
        assert_eq!(seed.dim(), self.shape(root), "seed shape");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param(_)) {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
                Op::ScaleBy(a, sv) => {
                    let gs = (&g * self.value(*a)).sum();
                    accumulate(&mut grads[sv.0], Array2::from_elem((1, 1), gs));
                    accumulate(&mut grads[a.0], g * self.scalar(*sv));
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        if x < *lo || x > *hi {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Neg(a) => accumulate(&mut grads[a.0], -g),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = &g * &**y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|v, &yv| *v -= yv * dot);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * gamma_v;
                    let d = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let gr = gxhat.row(r);
                        let xr = xhat.row(r);
                        let s1 = gr.sum();
                        let s2 = gr.dot(&xr);
                        let is = inv_std[r];
                        Zip::from(gx.row_mut(r))
                            .and(&gr)
                            .and(&xr)
                            .for_each(|o, &gv, &xv| *o = is / d * (d * gv - s1 - xv * s2));
                    }
                    accumulate(&mut grads[gamma.0], gg);
                    accumulate(&mut grads[beta.0], gb);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ConcatRows(a, b) => {
                    let na = self.shape(*a).0;
                    accumulate(&mut grads[a.0], g.slice(s![..na, ..]).to_owned());
                    accumulate(&mut grads[b.0], g.slice(s![na.., ..]).to_owned());
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        accumulate(&mut grads[p.0], g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::MaskedMean(a, mask) => {
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            ga.row_mut(r).scaled_add(1.0 / count, &g.row(0));
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::MulConst(a, c) => accumulate(&mut grads[a.0], g * c),
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::CrossEntropy(logits, label) => {
                    let z = self.value(*logits);
                    let mut p = softmax_rows(z, None);
                    p[[0, *label]] -= 1.0;
                    accumulate(&mut grads[logits.0], p * g[[0, 0]]);
                }
            }
        }
        NodeGrads { grads }
    }

    /// Adds the gradients of every parameter leaf into `out`.
    pub fn collect_param_grads(&self, grads: &NodeGrads, out: &mut Gradients) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                *out.get_mut(*id) += g;
            }
        }
    }
}
