use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use claimscost::claims_data::{load_dataset, split_dataset, write_dataset, DatasetSchema, SplitMode, DEFAULT_QUARTERS};

use crate::Outcome;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Shuffle before splitting; without it the first records train.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

impl SplitArgs {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("--train-fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        Ok(())
    }
}

pub fn run(args: &SplitArgs, out: &Path) -> Result<Outcome> {
    let records = load_dataset(&args.data, &DatasetSchema { quarters: args.quarters })?;
    let mode = match args.shuffle_seed {
        Some(seed) => SplitMode::Shuffled { seed },
        None => SplitMode::Positional,
    };
    let (train, test) = split_dataset(&records, args.train_fraction, mode)?;
    write_dataset(out.join(TRAIN_FILE), &train)?;
    write_dataset(out.join(TEST_FILE), &test)?;
    println!("split {} records: {} train, {} test", records.len(), train.len(), test.len());
    Ok(Outcome {
        artifacts: vec![TRAIN_FILE.into(), TEST_FILE.into()],
    })
}
