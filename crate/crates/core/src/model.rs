// SPDX-License-Identifier: Apache-2.0
//! The assembled classifier: encoders, causal fusion, multi-modal encoder,
//! front-door head.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frontdoor::{classify, concat_multimodal, fda_mdo, fda_out, ClassifierHead, Eq8Values};
use crate::fusion::{cf_forward, CfParams};
use crate::nn::{
    Encoder, FeatureVar, NnError, ParamId, ParamKind, ParamStore, PatchEmbed3d, Result, Tape, TextEmbedding, Var,
    VolumeGrid,
};
use crate::text::TokenSequence;

/// Which stages run between the multi-modal encoder and the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Fusion and front-door stages removed from the graph entirely.
    NoCfFda,
}

/// Where visual tokens come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualSource {
    /// Raw volumes cut into cubic patches.
    Volume { dims: [usize; 3], patch: usize },
    /// Precomputed `tokens x d_model` features from an external extractor.
    Features { tokens: usize },
}

impl VisualSource {
    pub fn n_tokens(&self) -> usize {
        match *self {
            VisualSource::Volume { dims, patch } => dims.iter().map(|&d| d / patch.max(1)).product(),
            VisualSource::Features { tokens } => tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub visual_depth: usize,
    pub text_depth: usize,
    pub multimodal_depth: usize,
    pub visual: VisualSource,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub ablation: Ablation,
    pub fda_eq8_values: Eq8Values,
    pub caam_lambda_init: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            d_model: 64,
            n_heads: 4,
            visual_depth: 6,
            text_depth: 6,
            multimodal_depth: 4,
            visual: VisualSource::Volume {
                dims: [32, 32, 32],
                patch: 8,
            },
            vocab_size: 2048,
            max_len: 128,
            dropout: 0.1,
            ablation: Ablation::Full,
            fda_eq8_values: Eq8Values::F,
            caam_lambda_init: 0.5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, Copy)]
enum VisualFrontEnd {
    Patches(PatchEmbed3d),
    Features { pos: ParamId, n_tokens: usize },
}

/// Parameter handles for every module, rebuilt deterministically from a config.
#[derive(Debug, Clone)]
struct Layout {
    visual_in: VisualFrontEnd,
    visual_enc: Encoder,
    text_in: TextEmbedding,
    text_enc: Encoder,
    cf: Option<CfParams>,
    mm_enc: Encoder,
    head: ClassifierHead,
}

/// Visual input of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    Volume(VolumeGrid),
    Features(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub visual: VisualInput,
    pub tokens: TokenSequence,
}

/// Every named intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub fv: FeatureVar,
    pub ft: FeatureVar,
    pub embedding_table: Var,
    pub f: FeatureVar,
    pub f_mm: FeatureVar,
    pub mediator: Option<FeatureVar>,
    pub m_do: Option<FeatureVar>,
    pub f_out: FeatureVar,
    pub pooled_mm: Var,
    pub pooled: Var,
    pub logits: Var,
    /// Row-stochastic matrices of the two front-door products.
    pub fda_weights: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct AdpcModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl AdpcModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if !config.d_model.is_multiple_of(config.n_heads.max(1)) || config.n_heads == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "d_model {} not divisible by {} heads",
                config.d_model, config.n_heads
            )));
        }
        if config.n_classes < 2 {
            return Err(NnError::ShapeMismatch("need at least two classes".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.d_model;
        let h = config.n_heads;
        let visual_in = match config.visual {
            VisualSource::Volume { dims, patch } => VisualFrontEnd::Patches(PatchEmbed3d::register(
                &mut store,
                "visual.embed",
                dims,
                patch,
                d,
                &mut rng,
            )?),
            VisualSource::Features { tokens } => VisualFrontEnd::Features {
                pos: store.normal("visual.embed.pos", ParamKind::Embedding, (tokens, d), 0.02, &mut rng),
                n_tokens: tokens,
            },
        };
        let visual_enc = Encoder::register(&mut store, "visual.enc", config.visual_depth, d, h, &mut rng);
        let text_in = TextEmbedding::register(&mut store, "text.embed", config.vocab_size, config.max_len, d, &mut rng);
        let text_enc = Encoder::register(&mut store, "text.enc", config.text_depth, d, h, &mut rng);
        let cf = match config.ablation {
            Ablation::Full => Some(CfParams::register(
                &mut store,
                "cf",
                d,
                h,
                config.caam_lambda_init,
                &mut rng,
            )),
            Ablation::NoCfFda => None,
        };
        let mm_enc = Encoder::register(&mut store, "mm.enc", config.multimodal_depth, d, h, &mut rng);
        let head = ClassifierHead::register(&mut store, "head", d, config.n_classes, &mut rng);
        Ok(Self {
            config,
            params: store,
            layout: Layout {
                visual_in,
                visual_enc,
                text_in,
                text_enc,
                cf,
                mm_enc,
                head,
            },
        })
    }

    /// Rebuilds a model and replaces every tensor with the given values.
    /// Names, kinds and shapes must match the config's layout exactly.
    pub fn from_parts(config: ModelConfig, tensors: Vec<(String, ParamKind, Array2<f64>)>) -> Result<Self> {
        let mut model = Self::new(config)?;
        if tensors.len() != model.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} tensors supplied, layout has {}",
                tensors.len(),
                model.params.len()
            )));
        }
        for (name, kind, value) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| NnError::ShapeMismatch(format!("unexpected tensor `{name}`")))?;
            let p = model.params.get(id);
            if p.kind != kind || p.value.dim() != value.dim() {
                return Err(NnError::ShapeMismatch(format!("tensor `{name}` does not match layout")));
            }
            *model.params.value_mut(id) = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_table(&self) -> ParamId {
        self.layout.text_in.table
    }

    pub fn cf_params(&self) -> Option<&CfParams> {
        self.layout.cf.as_ref()
    }

    pub fn visual_encode(&self, tape: &mut Tape<'_>, visual: &VisualInput) -> Result<FeatureVar> {
        let x = match (&self.layout.visual_in, visual) {
            (VisualFrontEnd::Patches(pe), VisualInput::Volume(vol)) => pe.forward(tape, vol)?,
            (VisualFrontEnd::Features { pos, n_tokens }, VisualInput::Features(feats)) => {
                if feats.dim() != (*n_tokens, self.config.d_model) {
                    return Err(NnError::ShapeMismatch(format!(
                        "features {:?}, expected ({n_tokens}, {})",
                        feats.dim(),
                        self.config.d_model
                    )));
                }
                let x = tape.input(feats.clone());
                let p = tape.param(*pos);
                tape.add(x, p)
            }
            _ => {
                return Err(NnError::ShapeMismatch(
                    "visual input kind does not match the configured source".into(),
                ))
            }
        };
        let x = self.layout.visual_enc.forward(tape, x, None)?;
        Ok(FeatureVar::new(x, None))
    }

    /// Text features plus the embedding-table leaf they were gathered from.
    pub fn text_encode(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<(FeatureVar, Var)> {
        let (x, table) = self.layout.text_in.forward(tape, seq)?;
        let mask = seq.attention_mask.clone();
        let x = self.layout.text_enc.forward(tape, x, Some(&mask))?;
        Ok((FeatureVar::new(x, Some(mask)), table))
    }

    pub fn multimodal_encode(&self, tape: &mut Tape<'_>, f: &FeatureVar) -> Result<FeatureVar> {
        let x = self.layout.mm_enc.forward(tape, f.var, f.mask())?;
        Ok(FeatureVar::new(x, f.mask.clone()))
    }

    /// Full pipeline: encoders, mediator, multi-modal encoder, front-door
    /// products, pooled classifier.
    pub fn forward(&self, tape: &mut Tape<'_>, input: &ModelInput) -> Result<ForwardTrace> {
        let fv = self.visual_encode(tape, &input.visual)?;
        let (ft, embedding_table) = self.text_encode(tape, &input.tokens)?;
        let f = concat_multimodal(tape, &fv, &ft)?;
        let f_mm = self.multimodal_encode(tape, &f)?;
        let n = tape.shape(f_mm.var).0;
        let pooled_mm = tape.masked_mean(f_mm.var, &f_mm.mask_or_all(n));

        let (mediator, m_do, f_out, fda_weights) = match &self.layout.cf {
            Some(cf) => {
                let mediator = cf_forward(tape, &fv, &ft, cf)?.mediator;
                let m_do = fda_mdo(tape, &f_mm, &mediator, self.config.fda_eq8_values)?;
                let out = fda_out(tape, &f_mm, &mediator, &m_do.out)?;
                let weights = vec![m_do.weights, out.weights];
                (Some(mediator), Some(m_do.out), out.out, weights)
            }
            None => (None, None, f_mm.clone(), Vec::new()),
        };
        let c = classify(tape, &f_out, &self.layout.head)?;
        Ok(ForwardTrace {
            fv,
            ft,
            embedding_table,
            f,
            f_mm,
            mediator,
            m_do,
            f_out,
            pooled_mm,
            pooled: c.pooled,
            logits: c.logits,
            fda_weights,
        })
    }

    /// Inference without dropout: logits as a plain vector.
    pub fn predict_logits(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, input)?;
        Ok(tape.value(trace.logits).iter().copied().collect())
    }
}

/// Softmax of a logit vector.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
