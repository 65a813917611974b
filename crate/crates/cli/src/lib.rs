//! The `claimscost` pipeline: generate, split, train, evaluate, sweep,
//! attribute and rerun, each writing a run manifest next to its outputs.

pub mod attribute;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod manifest;
pub mod model_dir;
pub mod split;
pub mod sweep;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use manifest::{RunManifest, MANIFEST_FILE};

/// Environment variable bounding the number of parallel sweep cells.
pub const WORKERS_ENV: &str = "CLAIMSCOST_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "claimscost", version, about = "Health-cost prediction from claims records")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic population with a known cost function.
    Generate(generate::GenerateArgs),
    /// Split a dataset into training and test files.
    Split(split::SplitArgs),
    /// Train a network, ridge model or ensemble.
    Train(train::TrainArgs),
    /// Evaluate models and naive baselines on a test set.
    Evaluate(evaluate::EvaluateArgs),
    /// Train and evaluate over a grid of patient counts and window lengths.
    Sweep(sweep::SweepArgs),
    /// Integrated-gradients attribution over a patient cohort.
    Attribute(attribute::AttributeArgs),
    /// Re-run the command recorded in a manifest into a new directory.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Output directory for the new run.
    #[arg(long)]
    pub out: PathBuf,
}

/// What a finished command reports back for its manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Attribute(_) => "attribute",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Command::Generate(a) => &a.out,
            Command::Split(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Evaluate(a) => &a.out,
            Command::Sweep(a) => &a.out,
            Command::Attribute(a) => &a.out,
            Command::Rerun(a) => &a.out,
        }
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Command::Generate(a) => a.out = out,
            Command::Split(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Evaluate(a) => a.out = out,
            Command::Sweep(a) => a.out = out,
            Command::Attribute(a) => a.out = out,
            Command::Rerun(a) => a.out = out,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Generate(a) => Some(a.seed),
            Command::Split(a) => a.shuffle_seed,
            Command::Train(a) => Some(a.seed),
            Command::Sweep(a) => Some(a.seed),
            Command::Evaluate(_) | Command::Attribute(_) | Command::Rerun(_) => None,
        }
    }

    /// Files and model directories the command reads.
    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Generate(_) | Command::Rerun(_) => Vec::new(),
            Command::Split(a) => vec![a.data.clone()],
            Command::Train(a) => vec![a.data.clone()],
            Command::Evaluate(a) => {
                let mut v = vec![a.test.clone()];
                v.extend(a.model_dirs());
                v
            }
            Command::Sweep(a) => vec![a.train.clone(), a.test.clone()],
            Command::Attribute(a) => {
                let mut v = vec![a.data.clone()];
                v.extend(a.model_dir());
                v
            }
        }
    }

    /// Checks flags without reading any data.
    fn validate(&self) -> Result<()> {
        match self {
            Command::Generate(a) => a.validate(),
            Command::Split(a) => a.validate(),
            Command::Train(a) => a.validate(),
            Command::Evaluate(a) => a.validate(),
            Command::Sweep(a) => a.validate(),
            Command::Attribute(a) => a.validate(),
            Command::Rerun(_) => Ok(()),
        }
    }

    fn execute(&self, out: &Path) -> Result<Outcome> {
        match self {
            Command::Generate(a) => generate::run(a, out),
            Command::Split(a) => split::run(a, out),
            Command::Train(a) => train::run(a, out),
            Command::Evaluate(a) => evaluate::run(a, out),
            Command::Sweep(a) => sweep::run(a, out),
            Command::Attribute(a) => attribute::run(a, out),
            Command::Rerun(_) => unreachable!("rerun is resolved before execution"),
        }
    }
}

/// Parses `args` (including the program name), expanding `--config`.
pub fn parse_args<I, T>(args: I) -> Result<Cli>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = config::expand_args(args.into_iter().map(Into::into).collect())?;
    Ok(Cli::try_parse_from(args)?)
}

/// Runs one command and writes its manifest, also on failure once the
/// output directory exists.
pub fn run(command: Command) -> Result<()> {
    let command = match command {
        Command::Rerun(r) => {
            let recorded = RunManifest::read(&r.manifest)?;
            let mut c = recorded.command()?;
            c.set_out_dir(r.out.clone());
            c
        }
        c => c,
    };
    command.validate()?;
    let out = command.out_dir().to_path_buf();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let started = Instant::now();
    let mut manifest = RunManifest::start(&command, command.seed())?;
    let result = manifest
        .fingerprint_inputs(&command.inputs())
        .and_then(|_| command.execute(&out));
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    match &result {
        Ok(outcome) => manifest.succeed(&outcome.artifacts),
        Err(e) => manifest.fail(e),
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    result.map(|_| ())
}
