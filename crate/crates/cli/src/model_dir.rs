//! A trained-model directory: model file(s), vocabulary and a JSON card
//! recording how to encode records for it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use claimscost::claims_data::ClaimsRecord;
use claimscost::model::{CostModel, SavedModel};
use claimscost::vocab_encoder::{truncate_observation, CodeVocabulary};

pub const CARD_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    /// `network`, `ridge` or `ensemble`.
    pub kind: String,
    /// Member type of an ensemble; equal to `kind` otherwise.
    pub base: String,
    pub label: String,
    /// Observation window of the dataset the model was trained from.
    pub quarters: usize,
    /// Final quarters kept and encoded; equal to `quarters` when untruncated.
    pub window: usize,
    pub min_count: u64,
    pub input_dim: usize,
    /// Model file or ensemble directory, relative to the card.
    pub model_path: String,
}

impl ModelCard {
    /// Applies the card's truncation to records from a `quarters`-long window.
    pub fn prepare(&self, records: &[ClaimsRecord]) -> Result<Vec<ClaimsRecord>> {
        prepare_records(records, self.quarters, self.window)
    }
}

/// Keeps the final `window` quarters of each record, `window` being whole
/// years, or the records unchanged when `window == quarters`.
pub fn prepare_records(records: &[ClaimsRecord], quarters: usize, window: usize) -> Result<Vec<ClaimsRecord>> {
    if window == quarters {
        return Ok(records.to_vec());
    }
    records
        .iter()
        .map(|r| truncate_observation(r, window / 4, quarters).map_err(Into::into))
        .collect()
}

pub fn default_label(kind: &str, base: &str) -> String {
    let name = match base {
        "ridge" => "Ridge regression",
        _ => "Neural network",
    };
    if kind == "ensemble" {
        format!("{name} (ensemble)")
    } else {
        name.to_string()
    }
}

pub struct LoadedModel {
    pub dir: PathBuf,
    pub card: ModelCard,
    pub vocab: CodeVocabulary,
    pub model: SavedModel,
}

pub fn load(dir: &Path) -> Result<LoadedModel> {
    let card_path = dir.join(CARD_FILE);
    let text = std::fs::read_to_string(&card_path).with_context(|| format!("reading {}", card_path.display()))?;
    let card: ModelCard = serde_json::from_str(&text).with_context(|| format!("parsing {}", card_path.display()))?;
    let vocab = CodeVocabulary::read_csv(dir.join(VOCAB_FILE), card.min_count)
        .with_context(|| format!("reading vocabulary in {}", dir.display()))?;
    let model = SavedModel::load(dir.join(&card.model_path))?;
    if model.input_dim() != card.input_dim || vocab.dimension(card.window) != card.input_dim {
        bail!(
            "{}: model, vocabulary and card disagree on the input dimension",
            dir.display()
        );
    }
    Ok(LoadedModel {
        dir: dir.to_path_buf(),
        card,
        vocab,
        model,
    })
}
