// SPDX-License-Identifier: Apache-2.0
//! Row-stochasticity, token-count and finiteness checks over random inputs.

use adpc_core::fusion::cf_forward;
use adpc_core::model::{ModelInput, VisualInput, VisualSource};
use adpc_core::nn::{softmax, Mha, ParamStore, Tape, VolumeGrid};
use adpc_core::text::tokenize;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad_suite::desk_model;
use super::row_stochastic_error;

#[derive(Debug, Default, Clone)]
pub struct NormReport {
    pub cases: usize,
    pub matrices: usize,
    pub max_row_error: f64,
    /// Mediator rows equal the multi-modal token count in every case.
    pub token_counts_equal: bool,
    /// Front-door products return (n x d) in every case.
    pub shapes_preserved: bool,
    /// Attention weight on masked keys is exactly 0.
    pub masked_keys_zero: bool,
    pub all_finite: bool,
}

impl NormReport {
    fn note(&mut self, m: &Array2<f64>) {
        self.matrices += 1;
        self.max_row_error = self.max_row_error.max(row_stochastic_error(m));
        self.all_finite &= m.iter().all(|v| v.is_finite());
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_row_error <= tol
            && self.token_counts_equal
            && self.shapes_preserved
            && self.masked_keys_zero
            && self.all_finite
    }
}

const WORDS: [&str; 7] = ["memory", "decline", "noted", ".", "scan", "shows", "atrophy"];

fn scaled(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.random_range(-1.0..1.0))
}

/// Runs `cases` random inputs (magnitudes spanning 1e-3 .. 1e3) through the
/// full model and the attention primitives.
pub fn fuzz(cases: usize, seed: u64) -> NormReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = [
        desk_model(
            VisualSource::Volume {
                dims: [4, 4, 4],
                patch: 2,
            },
            60,
        ),
        desk_model(VisualSource::Features { tokens: 3 }, 61),
    ];
    let vocab = adpc_core::text::Vocabulary::build(&["memory decline noted . scan shows atrophy"], 1, 64).unwrap();
    let mut attn_store = ParamStore::new();
    let attn = Mha::register(&mut attn_store, "attn", 8, 2, &mut rng);

    let mut report = NormReport {
        token_counts_equal: true,
        shapes_preserved: true,
        masked_keys_zero: true,
        all_finite: true,
        ..NormReport::default()
    };
    for case in 0..cases {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let (model, template) = &models[case % 2];
        let visual = match &template.visual {
            VisualInput::Volume(v) => {
                let [z, y, x] = v.dims();
                let data = scaled(z * y, x, scale, &mut rng);
                VisualInput::Volume(VolumeGrid::new(
                    Array3::from_shape_vec((z, y, x), data.into_iter().collect()).unwrap(),
                ))
            }
            VisualInput::Features(f) => VisualInput::Features(scaled(f.nrows(), f.ncols(), scale, &mut rng)),
        };
        let n_words = rng.random_range(0..12);
        let text: Vec<&str> = (0..n_words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        let tokens = tokenize(&text.join(" "), &vocab, 10).unwrap();
        let input = ModelInput { visual, tokens };

        let mut tape = Tape::new(model.params());
        let trace = model.forward(&mut tape, &input).unwrap();
        report.cases += 1;
        report.all_finite &= tape.value(trace.logits).iter().all(|v| v.is_finite());
        for &w in &trace.fda_weights {
            report.note(tape.value(w));
        }
        let (n, d) = tape.shape(trace.f_mm.var);
        let mediator = trace.mediator.as_ref().expect("full model");
        let m_do = trace.m_do.as_ref().expect("full model");
        report.token_counts_equal &= tape.shape(mediator.var).0 == n && tape.shape(trace.f.var).0 == n;
        report.shapes_preserved &= tape.shape(m_do.var) == (n, d) && tape.shape(trace.f_out.var) == (n, d);

        let cf = cf_forward(&mut tape, &trace.fv, &trace.ft, model.cf_params().unwrap()).unwrap();
        report.note(&tape.value(cf.caam.causal_weights).clone());
        report.note(&tape.value(cf.caam.confounder_weights).clone());

        let mut t2 = Tape::new(&attn_store);
        let q = t2.input(scaled(3, 8, scale, &mut rng));
        let kv = t2.input(scaled(5, 8, scale, &mut rng));
        let mut mask: Vec<bool> = (0..5).map(|_| rng.random_bool(0.6)).collect();
        mask[rng.random_range(0..5)] = true;
        let out = attn.forward(&mut t2, q, kv, kv, Some(&mask)).unwrap();
        for &w in &out.weights {
            let w = t2.value(w);
            report.note(w);
            for (j, &keep) in mask.iter().enumerate() {
                if !keep {
                    report.masked_keys_zero &= w.column(j).iter().all(|&v| v == 0.0);
                }
            }
        }
        report.all_finite &= t2.value(out.out).iter().all(|v| v.is_finite());

        let scores = scaled(4, 6, 100.0 * scale, &mut rng);
        report.note(&softmax(&scores).unwrap());
    }
    report
}
