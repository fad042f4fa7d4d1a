// SPDX-License-Identifier: Apache-2.0
//! Synthetic stand-in for restricted neuroimaging cohorts.
//!
//! Each sample is a soft Gaussian blob in a noisy volume whose width and
//! brightness depend on the class, plus a five-section clinical summary with
//! class keywords inserted at a configurable rate. An optional confounder (a
//! scanner-site token in the summary and a bright corner cube in the volume)
//! agrees with a designated label in a fixed fraction of each split.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_error, stratified_split, write_manifest, Result, SampleRecord, Split, TrainError};
use crate::nn::{write_volume_file, VolumeGrid};

/// Token present in the summary of every confounded sample.
pub const SPURIOUS_TOKEN: &str = "siteb";
/// Side length of the corner cube set to 1.0 in confounded volumes.
pub const CORNER_ARTIFACT: usize = 4;

/// Keyword per template slot, per class (CN, MCI, AD).
pub const CLASS_KEYWORDS: [[&str; 5]; 3] = [
    ["intact", "normal", "steady", "independent", "fluent"],
    ["borderline", "forgetful", "slowed", "prompted", "hesitant"],
    ["impaired", "amnestic", "unsteady", "dependent", "fragmented"],
];

/// Stands in for the planted token outside its class.
pub const PLANTED_FILLER: &str = "routine";

const NEUTRAL: [&str; 5] = ["reviewed", "documented", "assessed", "observed", "noted"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Samples per class; two entries for CN/AD, three for CN/MCI/AD.
    pub counts: Vec<usize>,
    pub dims: [usize; 3],
    pub noise: f64,
    /// Scales the class dependence of blob width and brightness, in [0, 1].
    pub class_signal: f64,
    /// Probability that each template slot carries the class keyword.
    pub keyword_prob: f64,
    /// Probability that a non-basic section is marked unrecorded.
    pub unrecorded_prob: f64,
    pub rho_train: Option<f64>,
    pub rho_test: Option<f64>,
    /// Label the confounder agrees with; defaults to the last class.
    pub confound_label: Option<usize>,
    pub planted_token: Option<String>,
    pub planted_class: Option<usize>,
    pub split_fractions: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            counts: vec![100, 100, 100],
            dims: [32, 32, 32],
            noise: 0.05,
            class_signal: 1.0,
            keyword_prob: 0.8,
            unrecorded_prob: 0.1,
            rho_train: None,
            rho_test: None,
            confound_label: None,
            planted_token: None,
            planted_class: None,
            split_fractions: [0.8, 0.1, 0.1],
        }
    }
}

impl SynthSpec {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    fn confound_target(&self) -> usize {
        self.confound_label.unwrap_or(self.n_classes().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidSpec(m));
        if !matches!(self.counts.len(), 2 | 3) || self.counts.contains(&0) {
            return bad(format!("counts {:?}: need 2 or 3 positive entries", self.counts));
        }
        if self.dims.iter().any(|&d| d < CORNER_ARTIFACT) {
            return bad(format!("dims {:?} too small", self.dims));
        }
        let probs = [self.class_signal, self.keyword_prob, self.unrecorded_prob];
        if probs
            .iter()
            .chain(self.rho_train.iter())
            .chain(self.rho_test.iter())
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.rho_train.is_some() != self.rho_test.is_some() {
            return bad("rho_train and rho_test must be given together".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if self.confound_target() >= self.n_classes() || self.planted_class.is_some_and(|c| c >= self.n_classes()) {
            return bad("designated class out of range".into());
        }
        if self.planted_token.is_some() != self.planted_class.is_some() {
            return bad("planted_token and planted_class must be given together".into());
        }
        if let Some(t) = &self.planted_token {
            if t.is_empty() || !t.chars().all(|c| c.is_ascii_lowercase()) || t == PLANTED_FILLER {
                return bad(format!("planted token `{t}` must be lowercase ascii letters"));
            }
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} do not sum to 1", self.split_fractions));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub records: Vec<SampleRecord>,
    /// Whether each record carries the confounder.
    pub confounded: Vec<bool>,
}

fn class_position(label: usize, n_classes: usize) -> f64 {
    label as f64 / (n_classes - 1) as f64
}

/// Maps a label of a two-class task onto the CN/MCI/AD keyword rows.
fn keyword_row(label: usize, n_classes: usize) -> usize {
    if n_classes == 2 {
        label * 2
    } else {
        label
    }
}

fn volume(spec: &SynthSpec, label: usize, confounded: bool, rng: &mut ChaCha8Rng) -> VolumeGrid {
    let t = class_position(label, spec.n_classes());
    let s = spec.class_signal;
    let radius = 8.0 + s * (2.0 - 4.0 * t) + rng.random_range(-0.5..0.5);
    let intensity = 0.8 + s * (0.2 - 0.4 * t);
    let sigma = radius / 2.0;
    let [nz, ny, nx] = spec.dims;
    let center = [nz, ny, nx].map(|d| d as f64 / 2.0 + rng.random_range(-1.5..1.5));
    let noise = Normal::new(0.0, spec.noise).expect("noise validated");
    let mut v = Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| {
        let d2 = (z as f64 - center[0]).powi(2) + (y as f64 - center[1]).powi(2) + (x as f64 - center[2]).powi(2);
        intensity * (-d2 / (2.0 * sigma * sigma)).exp()
    });
    v.mapv_inplace(|a| a + noise.sample(rng));
    if confounded {
        v.slice_mut(ndarray::s![..CORNER_ARTIFACT, ..CORNER_ARTIFACT, ..CORNER_ARTIFACT])
            .fill(1.0);
    }
    VolumeGrid::new(v)
}

fn summary(spec: &SynthSpec, label: usize, confounded: bool, rng: &mut ChaCha8Rng) -> String {
    let row = keyword_row(label, spec.n_classes());
    let mut slot = |i: usize| -> &'static str {
        if rng.random_bool(spec.keyword_prob) {
            CLASS_KEYWORDS[row][i]
        } else {
            NEUTRAL[i]
        }
    };
    let words: Vec<&str> = (0..5).map(&mut slot).collect();
    let age = rng.random_range(60..=88);
    let sex = if rng.random_bool(0.5) { "female" } else { "male" };
    let education = rng.random_range(8..=20);
    let site = if confounded { SPURIOUS_TOKEN } else { "sitea" };

    let mut basic = format!(
        "The participant is a {age} year old {sex} with {education} years of education. Scan acquired at {site}."
    );
    if let (Some(tok), Some(c)) = (&spec.planted_token, spec.planted_class) {
        // Same sentence for every class so only the planted word differs.
        let word = if c == label { tok.as_str() } else { PLANTED_FILLER };
        basic.push_str(&format!(" Referral notes the {word} finding."));
    }
    let mut bodies = vec![
        basic,
        format!(
            "Neurological examination is {}. Memory testing appears {}.",
            words[0], words[1]
        ),
        format!("Gait is {} and blood pressure is within limits.", words[2]),
        format!("The participant is {} in daily activities.", words[3]),
        format!("Speech is {} during conversation.", words[4]),
    ];
    for body in bodies.iter_mut().skip(1) {
        if rng.random_bool(spec.unrecorded_prob) {
            *body = "Unrecorded.".into();
        }
    }
    let titles = crate::text::Section::ALL.map(|s| s.title());
    let mut out = String::new();
    for (title, body) in titles.iter().zip(bodies) {
        out.push_str(title);
        out.push_str(":\n");
        out.push_str(&body);
        out.push('\n');
    }
    out
}

/// Confounder flags by exact allocation: in each split, `round(rho * n)`
/// samples have the confounder present iff their label is the designated
/// one, and the rest the reverse.
fn allocate_confounder(labels: &[usize], splits: &[Split], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (Some(rho_train), Some(rho_test)) = (spec.rho_train, spec.rho_test) else {
        return vec![false; labels.len()];
    };
    let target = spec.confound_target();
    let mut out = vec![false; labels.len()];
    for (which, rho) in [
        (Split::Train, rho_train),
        (Split::Val, rho_train),
        (Split::Test, rho_test),
    ] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| splits[i] == which).collect();
        idx.shuffle(rng);
        let agree = (rho * idx.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            let is_target = labels[i] == target;
            out[i] = if k < agree { is_target } else { !is_target };
        }
    }
    out
}

/// Writes `volumes/`, `summaries/` and `manifest.jsonl` under `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let n_classes = spec.n_classes();
    let labels: Vec<usize> = spec
        .counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let splits = stratified_split(&labels, spec.split_fractions, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let confounded = allocate_confounder(&labels, &splits, spec, &mut rng);

    let vol_dir = out_dir.join("volumes");
    let sum_dir = out_dir.join("summaries");
    for d in [&vol_dir, &sum_dir] {
        fs::create_dir_all(d).map_err(io_error(d))?;
    }

    let records: Vec<SampleRecord> = (0..labels.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let id = format!("s{i:04}");
            let vol = volume(spec, labels[i], confounded[i], &mut rng);
            let text = summary(spec, labels[i], confounded[i], &mut rng);
            let visual = vol_dir.join(format!("{id}.f32"));
            let summary_path = sum_dir.join(format!("{id}.txt"));
            write_volume_file(&visual, &vol)?;
            fs::write(&summary_path, text).map_err(io_error(&summary_path))?;
            Ok(SampleRecord {
                id,
                visual,
                summary: summary_path,
                label: labels[i],
                split: Some(splits[i]),
            })
        })
        .collect::<Result<_>>()?;

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records, n_classes)?;
    Ok(SynthOutput {
        manifest,
        records,
        confounded,
    })
}
