//! A common interface over trained cost models and their on-disk forms.
//!
//! A single network or ridge model is one binary file; an ensemble is a
//! directory holding `ensemble.json` and one entry per member.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims_data::NUM_CATEGORIES;
use crate::network::{self, Dropout, NetworkError, NetworkParameters, Output};
use crate::trainer::{ridge_from_bytes, ridge_to_bytes, RidgeParameters};
use crate::vocab_encoder::SparseFeatureVector;

const ENSEMBLE_INDEX: &str = "ensemble.json";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("attribution unsupported for {0}")]
    AttributionUnsupported(String),
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("per-category ensemble needs 7 members, got {0}")]
    PerCategoryArity(usize),
    #[error("ensemble members disagree on input dimension ({0} vs {1})")]
    MixedDimensions(usize, usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadModelFile { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A model mapping an encoded patient to seven category predictions.
pub trait CostModel {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &SparseFeatureVector) -> Result<Output, ModelError>;

    fn predict_total(&self, x: &SparseFeatureVector) -> Result<f64, ModelError> {
        self.predict(x).map(|y| network::predict_total(&y))
    }

    /// `∂(selector · ŷ)/∂x_i` at `x` for each listed position `i`.
    fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, ModelError>;

    /// [`CostModel::input_gradient_at`] over the nonzeros of `x`.
    fn input_gradient(&self, x: &SparseFeatureVector, selector: &Output) -> Result<Vec<f64>, ModelError> {
        self.input_gradient_at(x, x.indices(), selector)
    }
}

impl CostModel for NetworkParameters {
    fn input_dim(&self) -> usize {
        NetworkParameters::input_dim(self)
    }

    fn predict(&self, x: &SparseFeatureVector) -> Result<Output, ModelError> {
        Ok(network::predict(self, x)?)
    }

    fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, ModelError> {
        let (_, trace) = network::forward(self, x, &mut Dropout::inference(), true)?;
        let trace = trace.expect("trace requested");
        Ok(network::input_gradient_at(self, &trace, selector, indices)?)
    }
}

impl CostModel for RidgeParameters {
    fn input_dim(&self) -> usize {
        RidgeParameters::input_dim(self)
    }

    fn predict(&self, x: &SparseFeatureVector) -> Result<Output, ModelError> {
        Ok(RidgeParameters::predict(self, x)?)
    }

    fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, ModelError> {
        Ok(RidgeParameters::input_gradient_at(self, x, indices, selector)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Arithmetic mean of member predictions per category.
    Mean,
    /// Member `c` supplies category `c`.
    PerCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<SavedModel>,
    pub rule: CombineRule,
}

impl Ensemble {
    pub fn new(members: Vec<SavedModel>, rule: CombineRule) -> Self {
        Ensemble { members, rule }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let first = self.members.first().ok_or(ModelError::EmptyEnsemble)?;
        if self.rule == CombineRule::PerCategory && self.members.len() != NUM_CATEGORIES {
            return Err(ModelError::PerCategoryArity(self.members.len()));
        }
        let d = first.input_dim();
        for m in &self.members[1..] {
            if m.input_dim() != d {
                return Err(ModelError::MixedDimensions(d, m.input_dim()));
            }
        }
        Ok(())
    }
}

impl CostModel for Ensemble {
    fn input_dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.input_dim())
    }

    fn predict(&self, x: &SparseFeatureVector) -> Result<Output, ModelError> {
        self.validate()?;
        let mut y = [0.0; NUM_CATEGORIES];
        match self.rule {
            CombineRule::Mean => {
                for m in &self.members {
                    for (acc, v) in y.iter_mut().zip(m.predict(x)?) {
                        *acc += v;
                    }
                }
                let k = self.members.len() as f64;
                y.iter_mut().for_each(|v| *v /= k);
            }
            CombineRule::PerCategory => {
                for (c, m) in self.members.iter().enumerate() {
                    y[c] = m.predict(x)?[c];
                }
            }
        }
        Ok(y)
    }

    fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, ModelError> {
        self.validate()?;
        let mut g = vec![0.0; indices.len()];
        match self.rule {
            CombineRule::Mean => {
                let k = self.members.len() as f64;
                let s = selector.map(|v| v / k);
                for m in &self.members {
                    for (acc, v) in g.iter_mut().zip(m.input_gradient_at(x, indices, &s)?) {
                        *acc += v;
                    }
                }
            }
            CombineRule::PerCategory => {
                for (c, m) in self.members.iter().enumerate() {
                    if selector[c] == 0.0 {
                        continue;
                    }
                    let mut s = [0.0; NUM_CATEGORIES];
                    s[c] = selector[c];
                    for (acc, v) in g.iter_mut().zip(m.input_gradient_at(x, indices, &s)?) {
                        *acc += v;
                    }
                }
            }
        }
        Ok(g)
    }
}

/// Any model the trainer can produce.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Network(NetworkParameters),
    Ridge(RidgeParameters),
    Ensemble(Ensemble),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Network(_) => "network",
            SavedModel::Ridge(_) => "ridge",
            SavedModel::Ensemble(_) => "ensemble",
        }
    }

    /// Writes a network or ridge model to the file `path`, or an ensemble to
    /// the directory `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        match self {
            SavedModel::Network(p) => fs::write(path, network::to_bytes(p)).map_err(io_err(path)),
            SavedModel::Ridge(p) => fs::write(path, ridge_to_bytes(p)).map_err(io_err(path)),
            SavedModel::Ensemble(e) => save_ensemble(e, path),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        if path.is_dir() {
            return load_ensemble(path).map(SavedModel::Ensemble);
        }
        let bytes = fs::read(path).map_err(io_err(path))?;
        let bad = |e: NetworkError| ModelError::BadModelFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        match network::from_bytes(&bytes) {
            Ok(p) => Ok(SavedModel::Network(p)),
            Err(NetworkError::BadMagic) => ridge_from_bytes(&bytes).map(SavedModel::Ridge).map_err(bad),
            Err(e) => Err(bad(e)),
        }
    }
}

impl CostModel for SavedModel {
    fn input_dim(&self) -> usize {
        match self {
            SavedModel::Network(p) => CostModel::input_dim(p),
            SavedModel::Ridge(p) => CostModel::input_dim(p),
            SavedModel::Ensemble(e) => e.input_dim(),
        }
    }

    fn predict(&self, x: &SparseFeatureVector) -> Result<Output, ModelError> {
        match self {
            SavedModel::Network(p) => CostModel::predict(p, x),
            SavedModel::Ridge(p) => CostModel::predict(p, x),
            SavedModel::Ensemble(e) => e.predict(x),
        }
    }

    fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, ModelError> {
        match self {
            SavedModel::Network(p) => CostModel::input_gradient_at(p, x, indices, selector),
            SavedModel::Ridge(p) => CostModel::input_gradient_at(p, x, indices, selector),
            SavedModel::Ensemble(e) => e.input_gradient_at(x, indices, selector),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleIndex {
    rule: CombineRule,
    members: Vec<String>,
}

fn member_name(i: usize, m: &SavedModel) -> String {
    match m {
        SavedModel::Network(_) => format!("member_{i:02}.net"),
        SavedModel::Ridge(_) => format!("member_{i:02}.ridge"),
        SavedModel::Ensemble(_) => format!("member_{i:02}"),
    }
}

fn save_ensemble(e: &Ensemble, dir: &Path) -> Result<(), ModelError> {
    e.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut names = Vec::with_capacity(e.members.len());
    for (i, m) in e.members.iter().enumerate() {
        let name = member_name(i, m);
        m.save(dir.join(&name))?;
        names.push(name);
    }
    let index = EnsembleIndex {
        rule: e.rule,
        members: names,
    };
    let json = serde_json::to_string_pretty(&index).expect("index serialises");
    let p = dir.join(ENSEMBLE_INDEX);
    fs::write(&p, json + "\n").map_err(io_err(&p))
}

fn load_ensemble(dir: &Path) -> Result<Ensemble, ModelError> {
    let p: PathBuf = dir.join(ENSEMBLE_INDEX);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    let index: EnsembleIndex = serde_json::from_str(&text).map_err(|e| ModelError::BadModelFile {
        path: p.display().to_string(),
        reason: e.to_string(),
    })?;
    let members = index
        .members
        .iter()
        .map(|name| SavedModel::load(dir.join(name)))
        .collect::<Result<Vec<_>, _>>()?;
    let e = Ensemble::new(members, index.rule);
    e.validate()?;
    Ok(e)
}
