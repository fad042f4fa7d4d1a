// SPDX-License-Identifier: Apache-2.0
//! Differentiable building blocks: the tape, parameters, attention,
//! layer norm, transformer encoder blocks and the two input embeddings.

mod embed;
mod layers;
pub mod params;
pub mod tape;

pub use embed::{
    patchify, read_feature_file, read_tensor, read_volume_file, sidecar_path, write_feature_file, write_volume_file,
    PatchEmbed3d, TextEmbedding, VolumeGrid,
};
pub use layers::{softmax, Encoder, EncoderBlock, FeedForward, LayerNormParams, Linear, Mha, MhaOutput, LN_EPS};
pub use params::{Gradients, Param, ParamId, ParamKind, ParamStore};
pub use tape::{NodeGrads, Tape, Var};

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("volume dims {dims:?} are not divisible by patch size {patch}")]
    IndivisibleVolume { dims: [usize; 3], patch: usize },
    #[error("every token is masked out")]
    AllTokensMasked,
    #[error("bad tensor file {path}: {reason}")]
    BadTensorFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// A `tokens x d_model` matrix with an optional per-token validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub mask: Option<Vec<bool>>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, mask: None }
    }

    pub fn with_mask(data: Array2<f64>, mask: Vec<bool>) -> Self {
        Self { data, mask: Some(mask) }
    }

    pub fn n_tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A feature matrix living on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVar {
    pub var: Var,
    pub mask: Option<Vec<bool>>,
}

impl FeatureVar {
    pub fn new(var: Var, mask: Option<Vec<bool>>) -> Self {
        Self { var, mask }
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Mask with absent entries expanded to all-true.
    pub fn mask_or_all(&self, n: usize) -> Vec<bool> {
        self.mask.clone().unwrap_or_else(|| vec![true; n])
    }

    pub fn from_matrix(tape: &mut Tape<'_>, m: &FeatureMatrix) -> Self {
        Self {
            var: tape.input(m.data.clone()),
            mask: m.mask.clone(),
        }
    }

    pub fn to_matrix(&self, tape: &Tape<'_>) -> FeatureMatrix {
        FeatureMatrix {
            data: tape.value(self.var).clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Concatenates two optional masks of lengths `na` and `nb`.
pub fn concat_masks(a: Option<&[bool]>, na: usize, b: Option<&[bool]>, nb: usize) -> Option<Vec<bool>> {
    if a.is_none() && b.is_none() {
        return None;
    }
    let mut out = a.map(<[bool]>::to_vec).unwrap_or_else(|| vec![true; na]);
    out.extend(b.map(<[bool]>::to_vec).unwrap_or_else(|| vec![true; nb]));
    Some(out)
}

/// Xavier-normal standard deviation.
pub(crate) fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}
