use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use claimscost::claims_data::{generate_synthetic, write_dataset, SyntheticSpec, VocabSizes, DEFAULT_QUARTERS};

use crate::Outcome;

pub const DATASET_FILE: &str = "dataset.jsonl";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub patients: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    /// Weight of the planted code-pair effects; 0 gives a linear truth.
    #[arg(long, default_value_t = 1.0)]
    pub interaction_strength: f64,
    /// Sigma of the log-normal noise on targets and quarterly costs.
    #[arg(long, default_value_t = 0.5)]
    pub noise_scale: f64,
}

impl GenerateArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: self.patients,
            vocab_sizes: VocabSizes::default(),
            quarters: self.quarters,
            seed: self.seed,
            interaction_strength: self.interaction_strength,
            noise_scale: self.noise_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Ok(self.spec().validate()?)
    }
}

pub fn run(args: &GenerateArgs, out: &Path) -> Result<Outcome> {
    let ds = generate_synthetic(&args.spec())?;
    write_dataset(out.join(DATASET_FILE), &ds.records)?;
    ds.truth.write_effect_table(out.join("effects.csv")).context("writing effects.csv")?;
    ds.truth.write_pair_table(out.join("pairs.csv")).context("writing pairs.csv")?;
    let truth = serde_json::to_string_pretty(&ds.truth)?;
    std::fs::write(out.join("ground_truth.json"), truth + "\n").context("writing ground_truth.json")?;
    println!(
        "generated {} patients over {} quarters (linear truth: {})",
        ds.records.len(),
        args.quarters,
        ds.truth.linear
    );
    Ok(Outcome {
        artifacts: vec![
            DATASET_FILE.into(),
            "effects.csv".into(),
            "pairs.csv".into(),
            "ground_truth.json".into(),
        ],
    })
}
