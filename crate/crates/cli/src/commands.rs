// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adpc_core::analysis::{
    embedding_saliency, export_features as export_rows, ranking_report, write_features_csv, write_saliency_csv,
    FeatureStage,
};
use adpc_core::model::{Ablation, AdpcModel, VisualSource};
use adpc_core::scm::{ScmDocument, ScmError};
use adpc_core::train::{
    class_names, evaluate as evaluate_split, load_checkpoint, load_manifest, parse_label, prepare_dataset,
    run_ablation, save_checkpoint, synth_dataset, train as train_model, write_history_csv, Checkpoint, MetricsReport,
    PreparedData, Sample, Split, SynthSpec, TrainConfig, TrainError,
};
use serde_json::json;

/// Successful command result.
#[derive(Debug)]
pub struct CommandOutcome {
    pub message: String,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self { code: 1, message }
    }

    fn runtime(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        use TrainError::*;
        match e {
            InvalidSpec(_)
            | InvalidConfig(_)
            | MissingFile { .. }
            | BadLabel { .. }
            | ParseError { .. }
            | BadSample { .. }
            | ClassAbsent(_)
            | EmptySplit(_)
            | DigestMismatch
            | Checkpoint(_)
            | Text(_) => Failure::usage(e.to_string()),
            NonFiniteLoss { .. } | NonFiniteGradient(_) | ShapeMismatch(_) | Nn(_) | Io { .. } => {
                Failure::runtime(e.to_string())
            }
        }
    }
}

impl From<ScmError> for Failure {
    fn from(e: ScmError) -> Self {
        Failure::usage(e.to_string())
    }
}

type CmdResult = Result<CommandOutcome, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, flag: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{flag} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{flag} {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn existing(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{flag}: {} does not exist", path.display())))
    }
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    let config = match path {
        Some(p) => read_json(p, "--config")?,
        None => TrainConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

pub fn synth_data(config: Option<&Path>, seed: u64, out: &Path) -> CmdResult {
    let spec: SynthSpec = match config {
        Some(p) => read_json(p, "--config")?,
        None => SynthSpec::default(),
    };
    spec.validate()?;
    ensure_dir(out)?;
    let result = synth_dataset(&spec, seed, out)?;
    let confounded = result.confounded.iter().filter(|&&c| c).count();
    Ok(CommandOutcome {
        message: format!(
            "generated {} samples ({} confounded) with seed {seed}",
            result.records.len(),
            confounded
        ),
        artifacts: vec![result.manifest],
    })
}

pub fn train(
    config: Option<&Path>,
    manifest: &Path,
    seed: Option<u64>,
    ablation: Option<Ablation>,
    out: &Path,
) -> CmdResult {
    let mut config = load_train_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(a) = ablation {
        config.ablation = a;
    }
    existing(manifest, "--manifest")?;
    let records = load_manifest(manifest, config.n_classes)?;
    let data = prepare_dataset(&config, &records, None)?;
    let result = train_model(&config, &data)?;

    ensure_dir(out)?;
    let ckpt = out.join("checkpoint.adpc");
    let history = out.join("history.csv");
    let summary = out.join("train_summary.json");
    save_checkpoint(&ckpt, &result.best.model, &result.best.vocab)?;
    write_history_csv(&history, &result.history)?;
    let best_val = result
        .history
        .iter()
        .find(|h| h.epoch == result.best_epoch)
        .and_then(|h| h.val.clone());
    write_file(
        &summary,
        &pretty(&json!({
            "config": config,
            "best_epoch": result.best_epoch,
            "best_val": best_val,
            "param_count": result.best.model.params().scalar_count(),
            "checkpoint_digest": result.best.digest_hex(),
            "vocab_size": data.vocab.len(),
        })),
    )?;
    let acc = best_val.map_or_else(|| "n/a".to_string(), |m| format!("{:.4}", m.acc));
    Ok(CommandOutcome {
        message: format!(
            "trained {} epochs; best epoch {} (val ACC {acc})",
            config.epochs, result.best_epoch
        ),
        artifacts: vec![ckpt, history, summary],
    })
}

/// Loads a checkpoint and a manifest prepared with the checkpoint's vocabulary.
fn checkpoint_data(
    checkpoint: &Path,
    manifest: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<(Checkpoint, PreparedData), Failure> {
    existing(checkpoint, "--checkpoint")?;
    existing(manifest, "--manifest")?;
    let ck = load_checkpoint(checkpoint)?;
    let mc = ck.model.config().clone();
    let mut tc = load_train_config(config)?;
    tc.n_classes = mc.n_classes;
    tc.max_len = mc.max_len;
    if let VisualSource::Volume { patch, .. } = mc.visual {
        tc.patch = patch;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    let records = load_manifest(manifest, mc.n_classes)?;
    let data = prepare_dataset(&tc, &records, Some(ck.vocab.clone()))?;
    if data.visual != mc.visual {
        return Err(Failure::usage(format!(
            "manifest visual inputs {:?} do not match the checkpoint ({:?})",
            data.visual, mc.visual
        )));
    }
    Ok((ck, data))
}

fn select(data: &PreparedData, split: Option<Split>) -> Vec<&Sample> {
    match split {
        Some(s) => data.split(s),
        None => data.samples.iter().collect(),
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Console table with ACC, F1, Precision, Recall and AUC columns in percent.
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>9}  {:>6}  {:>6}\n",
        "Method", "ACC", "F1", "Precision", "Recall", "AUC"
    );
    for (name, m) in rows {
        writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>9}  {:>6}  {:>6}",
            name,
            pct(m.acc),
            pct(m.f1),
            pct(m.precision),
            pct(m.recall),
            m.auc.map_or_else(|| "n/a".to_string(), pct)
        )
        .expect("string write");
    }
    out
}

fn arm_name(a: Ablation) -> String {
    match a {
        Ablation::Full => "ADPC".to_string(),
        Ablation::NoCfFda => "ADPC w/o CF+FDA".to_string(),
    }
}

fn split_name(split: Option<Split>) -> &'static str {
    match split {
        Some(Split::Train) => "train",
        Some(Split::Val) => "val",
        Some(Split::Test) => "test",
        None => "all",
    }
}

pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    config: Option<&Path>,
    split: Option<Split>,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let (ck, data) = checkpoint_data(checkpoint, manifest, config, seed)?;
    let samples = select(&data, split);
    if samples.is_empty() {
        return Err(Failure::usage(format!("the {} split is empty", split_name(split))));
    }
    let report = evaluate_split(&ck.model, &samples)?;
    ensure_dir(out)?;
    let path = out.join(format!("eval_{}.json", split_name(split)));
    write_file(
        &path,
        &pretty(&json!({
            "checkpoint_digest": ck.digest_hex(),
            "split": split_name(split),
            "classes": class_names(ck.model.config().n_classes),
            "metrics": report,
        })),
    )?;
    let table = metrics_table(&[(arm_name(ck.model.config().ablation), &report)]);
    Ok(CommandOutcome {
        message: format!("{} samples ({} split)\n{table}", report.n_samples, split_name(split)),
        artifacts: vec![path],
    })
}

pub fn ablate(config: Option<&Path>, manifest: &Path, seed: Option<u64>, n_seeds: u64, out: &Path) -> CmdResult {
    let config = load_train_config(config)?;
    if n_seeds == 0 {
        return Err(Failure::usage("--n-seeds must be at least 1".into()));
    }
    existing(manifest, "--manifest")?;
    let first = seed.unwrap_or(config.seed);
    let seeds: Vec<u64> = (first..first + n_seeds).collect();
    let records = load_manifest(manifest, config.n_classes)?;
    let data = prepare_dataset(
        &TrainConfig {
            seed: first,
            ..config.clone()
        },
        &records,
        None,
    )?;
    let report = run_ablation(&config, &data, &seeds)?;

    ensure_dir(out)?;
    let path = out.join("ablation.json");
    write_file(&path, &pretty(&report))?;
    let mut message = String::new();
    for run in &report.runs {
        let rows = [
            (
                format!("{} seed {} val", arm_name(Ablation::Full), run.seed),
                &run.full.val,
            ),
            (
                format!("{} seed {} val", arm_name(Ablation::NoCfFda), run.seed),
                &run.ablated.val,
            ),
            (
                format!("{} seed {} test", arm_name(Ablation::Full), run.seed),
                &run.full.test,
            ),
            (
                format!("{} seed {} test", arm_name(Ablation::NoCfFda), run.seed),
                &run.ablated.test,
            ),
        ];
        message.push_str(&metrics_table(&rows));
    }
    let d = report.mean_delta_test;
    write!(
        message,
        "mean test delta (full - ablated): ACC {:+.1} F1 {:+.1} Precision {:+.1} Recall {:+.1}",
        100.0 * d.acc,
        100.0 * d.f1,
        100.0 * d.precision,
        100.0 * d.recall
    )
    .expect("string write");
    Ok(CommandOutcome {
        message,
        artifacts: vec![path],
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn scm_verify(
    scm_path: &Path,
    cause: Option<String>,
    target: Option<String>,
    mediator: Option<String>,
    adjust: Option<Vec<String>>,
    out: &Path,
) -> CmdResult {
    existing(scm_path, "--scm")?;
    let text =
        fs::read_to_string(scm_path).map_err(|e| Failure::usage(format!("--scm {}: {e}", scm_path.display())))?;
    let doc = ScmDocument::from_json(&text)?;
    let scm = doc.to_scm()?;
    let query = doc.query.clone();
    let cause = cause
        .or_else(|| query.as_ref().map(|q| q.cause.clone()))
        .ok_or_else(|| Failure::usage("missing --cause (no query in the document)".into()))?;
    let target = target
        .or_else(|| query.as_ref().map(|q| q.target.clone()))
        .ok_or_else(|| Failure::usage("missing --target (no query in the document)".into()))?;
    let mediator = mediator.or_else(|| query.as_ref().and_then(|q| q.mediator.clone()));
    let adjust = adjust.or_else(|| query.as_ref().map(|q| q.adjust.clone()).filter(|a| !a.is_empty()));

    let mut message = String::new();
    let criterion = match &mediator {
        Some(m) => {
            let r = scm.check_frontdoor_criterion(&cause, &target, &[m.as_str()])?;
            writeln!(
                message,
                "front-door criterion for {cause} -> {m} -> {target}: {}\n  intercepts directed paths: {}\n  no back-door {cause} to {m}: {}\n  {m} back-door blocked by {cause}: {}",
                if r.passes() { "satisfied" } else { "not satisfied" },
                r.intercepts_directed_paths,
                r.no_backdoor_cause_to_mediator,
                r.mediator_backdoor_blocked_by_cause
            )
            .expect("string write");
            Some(json!({
                "mediator": m,
                "passes": r.passes(),
                "intercepts_directed_paths": r.intercepts_directed_paths,
                "no_backdoor_cause_to_mediator": r.no_backdoor_cause_to_mediator,
                "mediator_backdoor_blocked_by_cause": r.mediator_backdoor_blocked_by_cause,
            }))
        }
        None => None,
    };

    let adjust_refs: Option<Vec<&str>> = adjust.as_ref().map(|a| a.iter().map(String::as_str).collect());
    let mut rows = Vec::new();
    let (mut fd_err, mut bd_err) = (None::<f64>, None::<f64>);
    writeln!(
        message,
        "{:>8} {:>8}  {:>14}  {:>14}  {:>10}  {:>14}  {:>10}",
        cause, target, "oracle", "front-door", "|diff|", "back-door", "|diff|"
    )
    .expect("string write");
    for x in 0..scm.cardinality(&cause)? {
        let oracle = scm.interventional_oracle(&target, &cause, x)?;
        let fd = match &mediator {
            Some(m) => Some(scm.frontdoor_adjust(&target, &cause, x, m)?),
            None => None,
        };
        let bd = match &adjust_refs {
            Some(a) => Some(scm.backdoor_adjust(&target, &cause, x, a)?),
            None => None,
        };
        if let Some(d) = &fd {
            let e = max_diff(&d.probs, &oracle.probs);
            fd_err = Some(fd_err.map_or(e, |m| m.max(e)));
        }
        if let Some(d) = &bd {
            let e = max_diff(&d.probs, &oracle.probs);
            bd_err = Some(bd_err.map_or(e, |m| m.max(e)));
        }
        for (y, &p) in oracle.probs.iter().enumerate() {
            let fmt = |d: &Option<adpc_core::scm::Distribution>| match d {
                Some(d) => (format!("{:.12}", d.probs[y]), format!("{:.2e}", (d.probs[y] - p).abs())),
                None => ("-".to_string(), "-".to_string()),
            };
            let (f, fdiff) = fmt(&fd);
            let (b, bdiff) = fmt(&bd);
            writeln!(
                message,
                "{x:>8} {y:>8}  {p:>14.12}  {f:>14}  {fdiff:>10}  {b:>14}  {bdiff:>10}"
            )
            .expect("string write");
            rows.push(json!({
                "cause_value": x,
                "target_value": y,
                "oracle": p,
                "frontdoor": fd.as_ref().map(|d| d.probs[y]),
                "backdoor": bd.as_ref().map(|d| d.probs[y]),
            }));
        }
    }
    if let Some(e) = fd_err {
        writeln!(message, "max |front-door - oracle| = {e:.3e}").expect("string write");
    }
    if let Some(e) = bd_err {
        writeln!(message, "max |back-door - oracle| = {e:.3e}").expect("string write");
    }

    ensure_dir(out)?;
    let path = out.join("scm_verify.json");
    write_file(
        &path,
        &pretty(&json!({
            "cause": cause,
            "target": target,
            "adjust": adjust,
            "criterion": criterion,
            "rows": rows,
            "max_abs_diff_frontdoor": fd_err,
            "max_abs_diff_backdoor": bd_err,
        })),
    )?;
    Ok(CommandOutcome {
        message: message.trim_end().to_string(),
        artifacts: vec![path],
    })
}

fn resolve_class(model: &AdpcModel, class: &str) -> Result<usize, Failure> {
    let n = model.config().n_classes;
    parse_label(class, n)
        .or_else(|| class.parse::<usize>().ok().filter(|&c| c < n))
        .ok_or_else(|| {
            Failure::usage(format!(
                "--class `{class}` is not one of {} or an index below {n}",
                class_names(n).join(", ")
            ))
        })
}

pub fn saliency(
    checkpoint: &Path,
    manifest: &Path,
    class: &str,
    n_samples: usize,
    top_k: usize,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    if n_samples == 0 {
        return Err(Failure::usage("--n-samples must be at least 1".into()));
    }
    let (ck, data) = checkpoint_data(checkpoint, manifest, None, seed)?;
    let class = resolve_class(&ck.model, class)?;
    if top_k > ck.vocab.len() {
        return Err(Failure::usage(format!(
            "--top-k {top_k} exceeds the vocabulary size {}",
            ck.vocab.len()
        )));
    }
    let samples: Vec<&Sample> = data.samples.iter().collect();
    let table = embedding_saliency(&ck.model, &samples, class, n_samples)?;
    let ranked = ranking_report(&table, &ck.vocab, top_k);

    ensure_dir(out)?;
    let csv = out.join(format!("saliency_{}.csv", table.class_name));
    let scores = out.join(format!("saliency_{}.json", table.class_name));
    write_saliency_csv(&csv, &ranked)?;
    write_file(&scores, &pretty(&table))?;
    let mut message = format!(
        "top {top_k} tokens for {} over {} samples\n",
        table.class_name, table.n_samples
    );
    for r in &ranked {
        writeln!(message, "{:>3}  {:<20} {:.6}", r.rank, r.token, r.score).expect("string write");
    }
    Ok(CommandOutcome {
        message: message.trim_end().to_string(),
        artifacts: vec![csv, scores],
    })
}

pub fn export_features(
    checkpoint: &Path,
    manifest: &Path,
    stage: FeatureStage,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let (ck, data) = checkpoint_data(checkpoint, manifest, None, seed)?;
    let samples: Vec<&Sample> = data.samples.iter().collect();
    let rows = export_rows(&ck.model, &samples, stage)?;
    ensure_dir(out)?;
    let name = match stage {
        FeatureStage::PostFdaPooled => "features_post_fda_pooled.csv",
        FeatureStage::MultimodalPooled => "features_multimodal_pooled.csv",
    };
    let path = out.join(name);
    write_features_csv(&path, &rows, ck.model.config().n_classes)?;
    Ok(CommandOutcome {
        message: format!("exported {} rows of width {}", rows.len(), ck.model.config().d_model),
        artifacts: vec![path],
    })
}
