// SPDX-License-Identifier: Apache-2.0
//! Finite-difference checks for every differentiable building block.

use adpc_core::frontdoor::{classify, fda_mdo, fda_out, ClassifierHead, Eq8Values};
use adpc_core::fusion::{caam_forward, cross_attend, fuse_concat, CaamParams, CfParams};
use adpc_core::model::{AdpcModel, ModelConfig, ModelInput, VisualInput, VisualSource};
use adpc_core::nn::{EncoderBlock, FeatureVar, LayerNormParams, Mha, ParamStore, Tape, VolumeGrid};
use adpc_core::text::{tokenize, Vocabulary};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, input_leaf, random_matrix, Coords, GradCheck};

const D: usize = 8;
const HEADS: usize = 2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Moves every tensor off its initialization (unit gains, zero biases).
pub fn jitter(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        store
            .value_mut(id)
            .mapv_inplace(|v| v + scale * r.random_range(-1.0..1.0));
    }
}

fn text_mask() -> Vec<bool> {
    vec![true, true, true, false]
}

pub fn mha() -> GradCheck {
    let mut store = ParamStore::new();
    let attn = Mha::register(&mut store, "attn", D, HEADS, &mut rng(1));
    let q = input_leaf(&mut store, "q", 3, D, 2);
    let kv = input_leaf(&mut store, "kv", 4, D, 3);
    jitter(&mut store, 4, 0.1);
    let mask = text_mask();
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let (q, kv) = (t.param(q), t.param(kv));
        attn.forward(t, q, kv, kv, Some(&mask)).unwrap().out
    })
}

pub fn layer_norm() -> GradCheck {
    let mut store = ParamStore::new();
    let ln = LayerNormParams::register(&mut store, "ln", D);
    let x = input_leaf(&mut store, "x", 4, D, 5);
    jitter(&mut store, 6, 0.3);
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let x = t.param(x);
        ln.forward(t, x)
    })
}

pub fn encoder_block() -> GradCheck {
    let mut store = ParamStore::new();
    let block = EncoderBlock::register(&mut store, "block", D, HEADS, &mut rng(7));
    let x = input_leaf(&mut store, "x", 4, D, 8);
    jitter(&mut store, 9, 0.1);
    let mask = text_mask();
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let x = t.param(x);
        block.forward(t, x, Some(&mask)).unwrap()
    })
}

pub fn cross_attention() -> GradCheck {
    let mut store = ParamStore::new();
    let cf = CfParams::register(&mut store, "cf", D, HEADS, 0.5, &mut rng(10));
    let fv = input_leaf(&mut store, "fv", 3, D, 11);
    let ft = input_leaf(&mut store, "ft", 4, D, 12);
    jitter(&mut store, 13, 0.1);
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let fv = FeatureVar::new(t.param(fv), None);
        let ft = FeatureVar::new(t.param(ft), Some(text_mask()));
        let c = cross_attend(t, &fv, &ft, &cf).unwrap();
        fuse_concat(t, &c.f_vtt, &c.f_tvv).unwrap().var
    })
}

pub fn caam() -> GradCheck {
    let mut store = ParamStore::new();
    let p = CaamParams::register(&mut store, "caam", D, 0.5, &mut rng(14));
    let x = input_leaf(&mut store, "x", 7, D, 15);
    jitter(&mut store, 16, 0.1);
    let mask = vec![true, true, true, true, true, true, false];
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let x = FeatureVar::new(t.param(x), Some(mask.clone()));
        caam_forward(t, &x, &p).unwrap().out.var
    })
}

pub fn fda_mediated(values: Eq8Values) -> GradCheck {
    let mut store = ParamStore::new();
    let f = input_leaf(&mut store, "f", 7, D, 17);
    let m = input_leaf(&mut store, "m", 7, D, 18);
    let mask = vec![true, true, true, true, true, false, true];
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let f = FeatureVar::new(t.param(f), Some(mask.clone()));
        let m = FeatureVar::new(t.param(m), Some(mask.clone()));
        fda_mdo(t, &f, &m, values).unwrap().out.var
    })
}

pub fn fda_output() -> GradCheck {
    let mut store = ParamStore::new();
    let f = input_leaf(&mut store, "f", 7, D, 19);
    let m = input_leaf(&mut store, "m", 7, D, 20);
    let m_do = input_leaf(&mut store, "m_do", 7, D, 21);
    let mask = vec![true, true, false, true, true, true, true];
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let f = FeatureVar::new(t.param(f), Some(mask.clone()));
        let m = FeatureVar::new(t.param(m), Some(mask.clone()));
        let m_do = FeatureVar::new(t.param(m_do), Some(mask.clone()));
        fda_out(t, &f, &m, &m_do).unwrap().out.var
    })
}

pub fn classifier() -> GradCheck {
    let mut store = ParamStore::new();
    let head = ClassifierHead::register(&mut store, "head", D, 3, &mut rng(22));
    let x = input_leaf(&mut store, "x", 5, D, 23);
    jitter(&mut store, 24, 0.5);
    check_gradients(&store, Coords::All, |t: &mut Tape<'_>| {
        let x = FeatureVar::new(t.param(x), Some(vec![true, false, true, true, false]));
        classify(t, &x, &head).unwrap().logits
    })
}

/// A desk-shape model (one block per encoder) and matching input.
pub fn desk_model(visual: VisualSource, seed: u64) -> (AdpcModel, ModelInput) {
    let vocab = Vocabulary::build(&["memory decline noted . scan shows atrophy"], 1, 64).unwrap();
    let config = ModelConfig {
        d_model: D,
        n_heads: HEADS,
        visual_depth: 1,
        text_depth: 1,
        multimodal_depth: 1,
        visual,
        vocab_size: vocab.len(),
        max_len: 10,
        init_seed: seed,
        ..ModelConfig::default()
    };
    let mut model = AdpcModel::new(config).unwrap();
    jitter(model.params_mut(), seed + 1, 0.1);
    let visual = match visual {
        VisualSource::Volume { dims, .. } => {
            let data = random_matrix(dims[0] * dims[1], dims[2], seed + 2);
            VisualInput::Volume(VolumeGrid::new(
                Array3::from_shape_vec((dims[0], dims[1], dims[2]), data.into_iter().collect()).unwrap(),
            ))
        }
        VisualSource::Features { tokens } => VisualInput::Features(random_matrix(tokens, D, seed + 2)),
    };
    let tokens = tokenize("Memory decline noted. Scan shows atrophy.", &vocab, 10).unwrap();
    (model, ModelInput { visual, tokens })
}

pub fn end_to_end(visual: VisualSource, seed: u64) -> GradCheck {
    let (model, input) = desk_model(visual, seed);
    check_gradients(model.params(), Coords::Sample(400, seed), |t: &mut Tape<'_>| {
        model.forward(t, &input).unwrap().logits
    })
}

pub fn gradient_suite() -> Vec<(&'static str, GradCheck)> {
    vec![
        ("mha", mha()),
        ("layer_norm", layer_norm()),
        ("encoder_block", encoder_block()),
        ("cross_attend", cross_attention()),
        ("caam_forward", caam()),
        ("fda_mdo (F values)", fda_mediated(Eq8Values::F)),
        ("fda_mdo (M values)", fda_mediated(Eq8Values::M)),
        ("fda_out", fda_output()),
        ("classify", classifier()),
        (
            "adpc_forward (volume)",
            end_to_end(
                VisualSource::Volume {
                    dims: [4, 4, 4],
                    patch: 2,
                },
                30,
            ),
        ),
        (
            "adpc_forward (features)",
            end_to_end(VisualSource::Features { tokens: 3 }, 40),
        ),
    ]
}
