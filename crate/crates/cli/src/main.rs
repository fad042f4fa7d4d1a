// SPDX-License-Identifier: Apache-2.0
//! `adpc` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for
//! runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::{CommandOutcome, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "adpc",
    version,
    about = "Causal multi-modal classification toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutDir {
    /// Directory receiving every file the command writes.
    #[arg(long, env = "ADPC_OUT_DIR", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Full,
    #[value(name = "no_cf_fda")]
    NoCfFda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    #[value(name = "post_fda_pooled")]
    PostFdaPooled,
    #[value(name = "multimodal_pooled")]
    MultimodalPooled,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (volumes, summaries, manifest).
    SynthData {
        /// JSON dataset spec; omitted keys take defaults.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a model and keep the best-validation checkpoint.
    Train {
        /// JSON training config; omitted keys take defaults.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config ablation arm.
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Config supplying split fractions for manifests without a split field.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Paired full vs. fusion-free training over several seeds.
    Ablate {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// First seed; runs use seed, seed+1, ...
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        n_seeds: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Check identifiability of an SCM query and compare the adjustment formulas with intervention.
    ScmVerify {
        /// SCM document (JSON).
        #[arg(long, value_name = "FILE")]
        scm: Option<PathBuf>,
        #[arg(long)]
        cause: Option<String>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        mediator: Option<String>,
        /// Back-door adjustment set, comma separated.
        #[arg(long, value_delimiter = ',')]
        adjust: Option<Vec<String>>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Rank vocabulary tokens by embedding-gradient saliency for one class.
    Saliency {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Class name (CN, MCI, AD) or index.
        #[arg(long)]
        class: Option<String>,
        #[arg(long, default_value_t = 25)]
        n_samples: usize,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write pooled feature vectors for every manifest sample.
    ExportFeatures {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StageArg::PostFdaPooled)]
        stage: StageArg,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::usage(format!("missing required flag {flag}")))
}

fn out_dir(out: OutDir) -> Result<PathBuf, Failure> {
    out.out_dir
        .ok_or_else(|| Failure::usage("missing required flag --out-dir (or set ADPC_OUT_DIR)".to_string()))
}

fn run(command: Command) -> Result<CommandOutcome, Failure> {
    match command {
        Command::SynthData { config, seed, out } => commands::synth_data(config.as_deref(), seed, &out_dir(out)?),
        Command::Train {
            config,
            manifest,
            seed,
            ablation,
            out,
        } => {
            let manifest = required(manifest, "--manifest")?;
            let ablation = ablation.map(|a| match a {
                AblationArg::Full => adpc_core::model::Ablation::Full,
                AblationArg::NoCfFda => adpc_core::model::Ablation::NoCfFda,
            });
            commands::train(config.as_deref(), &manifest, seed, ablation, &out_dir(out)?)
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            config,
            split,
            seed,
            out,
        } => {
            let checkpoint = required(checkpoint, "--checkpoint")?;
            let manifest = required(manifest, "--manifest")?;
            let split = match split {
                SplitArg::Train => Some(adpc_core::train::Split::Train),
                SplitArg::Val => Some(adpc_core::train::Split::Val),
                SplitArg::Test => Some(adpc_core::train::Split::Test),
                SplitArg::All => None,
            };
            commands::evaluate(&checkpoint, &manifest, config.as_deref(), split, seed, &out_dir(out)?)
        }
        Command::Ablate {
            config,
            manifest,
            seed,
            n_seeds,
            out,
        } => {
            let manifest = required(manifest, "--manifest")?;
            commands::ablate(config.as_deref(), &manifest, seed, n_seeds, &out_dir(out)?)
        }
        Command::ScmVerify {
            scm,
            cause,
            target,
            mediator,
            adjust,
            out,
        } => {
            let scm = required(scm, "--scm")?;
            commands::scm_verify(&scm, cause, target, mediator, adjust, &out_dir(out)?)
        }
        Command::Saliency {
            checkpoint,
            manifest,
            class,
            n_samples,
            top_k,
            seed,
            out,
        } => {
            let checkpoint = required(checkpoint, "--checkpoint")?;
            let manifest = required(manifest, "--manifest")?;
            let class = required(class, "--class")?;
            commands::saliency(&checkpoint, &manifest, &class, n_samples, top_k, seed, &out_dir(out)?)
        }
        Command::ExportFeatures {
            checkpoint,
            manifest,
            stage,
            seed,
            out,
        } => {
            let checkpoint = required(checkpoint, "--checkpoint")?;
            let manifest = required(manifest, "--manifest")?;
            let stage = match stage {
                StageArg::PostFdaPooled => adpc_core::analysis::FeatureStage::PostFdaPooled,
                StageArg::MultimodalPooled => adpc_core::analysis::FeatureStage::MultimodalPooled,
            };
            commands::export_features(&checkpoint, &manifest, stage, seed, &out_dir(out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
