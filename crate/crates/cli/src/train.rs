use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use claimscost::claims_data::{load_dataset, ClaimsRecord, DatasetSchema, DEFAULT_QUARTERS};
use claimscost::model::{CostModel, SavedModel};
use claimscost::network::{Architecture, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use claimscost::trainer::{
    fit_ensemble, fit_network, fit_per_category, fit_ridge, fit_ridge_ensemble, write_loss_log, CategoryMode,
    EncodedSet, EpochLoss, TrainConfig, DEFAULT_ENSEMBLE, DEFAULT_EPOCHS, DEFAULT_LAMBDA, NETWORK_BATCH,
    RIDGE_BATCH,
};
use claimscost::vocab_encoder::{build_vocabulary_with, CodeVocabulary, NumericSelection, VocabularyConfig};

use crate::model_dir::{default_label, prepare_records, ModelCard, CARD_FILE, VOCAB_FILE};
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Network,
    Ridge,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Network,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Joint,
    Separate,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub model: ModelKind,
    /// Training records (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    /// Keep only the final years of each record before encoding.
    #[arg(long)]
    pub years: Option<usize>,
    /// Codes seen at most this often are dropped from the vocabulary.
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    /// Numeric features to encode: `all`, `none` or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub numeric: String,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Defaults to 32 for networks and 128 for ridge.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Ridge penalty.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ensemble size.
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE)]
    pub k: usize,
    /// Member type of an ensemble.
    #[arg(long, value_enum, default_value_t = BaseKind::Network)]
    pub base: BaseKind,
    /// One seven-output network, or one network per cost category.
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    pub mode: ModeArg,
}

/// Everything that determines a fitted model, independent of file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub model: ModelKind,
    pub base: BaseKind,
    pub mode: CategoryMode,
    pub quarters: usize,
    pub window: usize,
    pub vocab: VocabularyConfig,
    pub config: TrainConfig,
    pub arch_hidden: usize,
    pub arch_dropout: f64,
    pub k: usize,
}

pub struct Fitted {
    pub model: SavedModel,
    pub vocab: CodeVocabulary,
    pub logs: Vec<Vec<EpochLoss>>,
}

impl FitSpec {
    pub fn is_ridge(&self) -> bool {
        self.model == ModelKind::Ridge || (self.model == ModelKind::Ensemble && self.base == BaseKind::Ridge)
    }

    pub fn base_name(&self) -> &'static str {
        if self.is_ridge() {
            "ridge"
        } else {
            "network"
        }
    }

    /// Builds the vocabulary on `train` and fits the model.
    pub fn fit(&self, train: &[ClaimsRecord]) -> Result<Fitted> {
        let train = prepare_records(train, self.quarters, self.window)?;
        let vocab = build_vocabulary_with(&train, &self.vocab)?;
        let data = EncodedSet::from_records(&train, &vocab, self.window)?;
        let arch = Architecture {
            input_dim: vocab.dimension(self.window),
            hidden: self.arch_hidden,
            dropout_rate: self.arch_dropout,
        };
        let (model, logs) = match (self.model, self.is_ridge(), self.mode) {
            (ModelKind::Ridge, _, _) => {
                let t = fit_ridge(&data, &self.config)?;
                (SavedModel::Ridge(t.params), vec![t.log])
            }
            (ModelKind::Network, _, CategoryMode::Joint) => {
                let t = fit_network(&data, &self.config, arch)?;
                (SavedModel::Network(t.params), vec![t.log])
            }
            (ModelKind::Network, _, CategoryMode::Separate) => {
                let t = fit_per_category(&data, &self.config, arch)?;
                (SavedModel::Ensemble(t.model), t.logs)
            }
            (ModelKind::Ensemble, true, _) => {
                let t = fit_ridge_ensemble(&data, &self.config, self.k)?;
                (SavedModel::Ensemble(t.model), t.logs)
            }
            (ModelKind::Ensemble, false, mode) => {
                let t = fit_ensemble(&data, &self.config, arch, self.k, mode)?;
                (SavedModel::Ensemble(t.model), t.logs)
            }
        };
        Ok(Fitted { model, vocab, logs })
    }
}

pub fn parse_numeric(s: &str) -> Result<NumericSelection> {
    Ok(match s {
        "all" => NumericSelection::All,
        "none" => NumericSelection::None,
        list => {
            let names: Vec<String> = list.split(',').map(|n| n.trim().to_string()).collect();
            if names.iter().any(String::is_empty) {
                bail!("--numeric expects all, none or a comma-separated list of names");
            }
            NumericSelection::Only(names)
        }
    })
}

/// Checks `years` against a `quarters`-long window and returns the number
/// of quarters to encode.
pub fn window_for(quarters: usize, years: Option<usize>) -> Result<usize> {
    if quarters < 4 {
        bail!("--quarters must be at least 4, got {quarters}");
    }
    match years {
        None => Ok(quarters),
        Some(y) if (1..=6).contains(&y) && 4 * y <= quarters => Ok(4 * y),
        Some(y) => bail!("--years must lie in 1..=min(6, {}), got {y}", quarters / 4),
    }
}

impl TrainArgs {
    pub fn fit_spec(&self) -> Result<FitSpec> {
        let mode = match self.mode {
            ModeArg::Joint => CategoryMode::Joint,
            ModeArg::Separate => CategoryMode::Separate,
        };
        let mut spec = FitSpec {
            model: self.model,
            base: self.base,
            mode,
            quarters: self.quarters,
            window: window_for(self.quarters, self.years)?,
            vocab: VocabularyConfig {
                min_count: self.min_count,
                numeric: parse_numeric(&self.numeric)?,
            },
            config: TrainConfig::network(self.seed),
            arch_hidden: self.hidden,
            arch_dropout: self.dropout,
            k: self.k,
        };
        let ridge = spec.is_ridge();
        spec.config = if ridge {
            TrainConfig {
                lambda: self.lambda,
                ..TrainConfig::ridge(self.seed)
            }
        } else {
            TrainConfig::network(self.seed)
        };
        spec.config.epochs = self.epochs;
        spec.config.batch_size = self.batch.unwrap_or(if ridge { RIDGE_BATCH } else { NETWORK_BATCH });
        spec.config.adam.learning_rate = self.lr;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.fit_spec()?;
        spec.config.validate()?;
        if !spec.is_ridge() {
            Architecture {
                input_dim: 1,
                hidden: self.hidden,
                dropout_rate: self.dropout,
            }
            .validate()?;
        }
        if self.model == ModelKind::Ensemble && self.k == 0 {
            bail!("--k must be at least 1");
        }
        if spec.is_ridge() && self.mode == ModeArg::Separate {
            bail!("--mode separate applies to networks only");
        }
        Ok(())
    }
}

pub fn run(args: &TrainArgs, out: &Path) -> Result<Outcome> {
    let spec = args.fit_spec()?;
    let records = load_dataset(&args.data, &DatasetSchema { quarters: args.quarters })?;
    let fitted = spec.fit(&records)?;
    let artifacts = save(&spec, &fitted, out)?;
    let last = fitted.logs.first().and_then(|l| l.last());
    println!(
        "trained {} on {} records (input dimension {}){}",
        fitted.model.kind(),
        records.len(),
        fitted.model.input_dim(),
        last.map(|e| format!(", final loss {:.4e}", e.mean_train_loss)).unwrap_or_default()
    );
    Ok(Outcome { artifacts })
}

/// Writes model, vocabulary, card and loss logs into `out`.
pub fn save(spec: &FitSpec, fitted: &Fitted, out: &Path) -> Result<Vec<String>> {
    let kind = fitted.model.kind();
    let model_path = match &fitted.model {
        SavedModel::Network(_) => "model.net",
        SavedModel::Ridge(_) => "model.ridge",
        SavedModel::Ensemble(_) => "model",
    };
    fitted.model.save(out.join(model_path))?;
    fitted.vocab.write_csv(out.join(VOCAB_FILE))?;
    let mut label = default_label(if spec.model == ModelKind::Ensemble { "ensemble" } else { kind }, spec.base_name());
    if spec.mode == CategoryMode::Separate {
        label.push_str(" per category");
    }
    let card = ModelCard {
        kind: kind.to_string(),
        base: spec.base_name().to_string(),
        label,
        quarters: spec.quarters,
        window: spec.window,
        min_count: spec.vocab.min_count,
        input_dim: fitted.model.input_dim(),
        model_path: model_path.to_string(),
    };
    let json = serde_json::to_string_pretty(&card)? + "\n";
    std::fs::write(out.join(CARD_FILE), json).context("writing model card")?;

    let mut artifacts = vec![model_path.to_string(), VOCAB_FILE.to_string(), CARD_FILE.to_string()];
    if fitted.logs.len() == 1 {
        write_loss_log(out.join("loss_log.csv"), &fitted.logs[0])?;
        artifacts.push("loss_log.csv".into());
    } else {
        for (i, log) in fitted.logs.iter().enumerate() {
            let name = format!("loss_log_member_{i:02}.csv");
            write_loss_log(out.join(&name), log)?;
            artifacts.push(name);
        }
    }
    Ok(artifacts)
}
