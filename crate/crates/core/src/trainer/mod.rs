//! Minibatch l2 training with ADAM for the network and the ridge baseline.
//!
//! Targets are divided by a single cost unit (the root-mean-square target
//! entry of the training set unless fixed in the config) before fitting and
//! predictions are multiplied back, so the optimiser works on O(1) numbers
//! regardless of the currency scale. For ridge this leaves the penalised
//! optimum unchanged because loss and penalty scale together.

mod adam;
mod ridge;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use ridge::{ridge_from_bytes, ridge_to_bytes, train_ridge, fit_ridge, RidgeParameters, TrainedRidge};

use crate::claims_data::{ClaimsRecord, NUM_CATEGORIES};
use crate::model::{CombineRule, Ensemble, SavedModel};
use crate::network::{
    backward_into, forward, Architecture, HIDDEN_LAYERS, DropoutConfig, NetworkError, NetworkParameters, Output,
};
use crate::rng::{stream, Purpose};
use crate::vocab_encoder::{encode, CodeVocabulary, SparseFeatureVector};

pub const DEFAULT_EPOCHS: usize = 25;
pub const NETWORK_BATCH: usize = 32;
pub const RIDGE_BATCH: usize = 128;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_ENSEMBLE: usize = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("record {0:?} has no target")]
    MissingTarget(String),
    #[error("non-finite gradient at ADAM step {step} (parameter {index})")]
    NonFiniteGradient { step: u64, index: usize },
    #[error("parameter/gradient shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// How the seven cost categories are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CategoryMode {
    /// One model with seven outputs and a summed squared-error loss.
    #[default]
    Joint,
    /// Seven models, each trained on one category's loss only.
    Separate,
}

impl CategoryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryMode::Joint => "joint",
            CategoryMode::Separate => "separate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "joint" => Some(CategoryMode::Joint),
            "separate" => Some(CategoryMode::Separate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Ridge penalty on the mean-loss scale; ignored by the network.
    pub lambda: f64,
    pub adam: AdamConfig,
    /// Cost unit targets are divided by; `None` derives it from the data.
    pub target_scale: Option<f64>,
    /// Categories contributing to the loss.
    pub loss_mask: [bool; NUM_CATEGORIES],
    /// Optimise on inputs divided by [`input_scales`], then fold the scales
    /// back into the input weights. The fitted objective is unchanged.
    pub standardize_inputs: bool,
}

impl TrainConfig {
    pub fn network(seed: u64) -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: NETWORK_BATCH,
            seed,
            shuffle: true,
            lambda: 0.0,
            adam: AdamConfig::default(),
            target_scale: None,
            loss_mask: [true; NUM_CATEGORIES],
            standardize_inputs: true,
        }
    }

    pub fn ridge(seed: u64) -> Self {
        TrainConfig {
            batch_size: RIDGE_BATCH,
            lambda: DEFAULT_LAMBDA,
            ..Self::network(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if let Some(s) = self.target_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(TrainError::InvalidConfig(format!("target scale must be positive, got {s}")));
            }
        }
        if !self.loss_mask.iter().any(|m| *m) {
            return Err(TrainError::InvalidConfig("loss mask selects no category".into()));
        }
        self.adam.validate()
    }

    fn mask_only(mut self, category: usize) -> Self {
        self.loss_mask = [false; NUM_CATEGORIES];
        self.loss_mask[category] = true;
        self
    }
}

/// Encoded features and targets of a training set.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub features: Vec<SparseFeatureVector>,
    pub targets: Vec<Output>,
}

impl EncodedSet {
    pub fn from_records(
        records: &[ClaimsRecord],
        vocab: &CodeVocabulary,
        quarters: usize,
    ) -> Result<Self, TrainError> {
        if records.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let mut features = Vec::with_capacity(records.len());
        let mut targets = Vec::with_capacity(records.len());
        for r in records {
            let t = r
                .target
                .ok_or_else(|| TrainError::MissingTarget(r.patient_id.clone()))?;
            features.push(encode(r, vocab, quarters));
            targets.push(t.0);
        }
        Ok(EncodedSet { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, |x| x.dimension())
    }

    /// Root-mean-square of all target entries (1 for an all-zero set).
    pub fn rms_target(&self) -> f64 {
        let n = (self.targets.len() * NUM_CATEGORIES) as f64;
        let ss: f64 = self.targets.iter().flatten().map(|v| v * v).sum();
        let rms = (ss / n).sqrt();
        if rms > 0.0 && rms.is_finite() {
            rms
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean over examples of the summed squared error (Euro²), measured
    /// during the epoch with dropout active.
    pub mean_train_loss: f64,
    pub wall_seconds: f64,
}

pub fn write_loss_log(path: impl AsRef<Path>, log: &[EpochLoss]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,mean_train_loss,wall_seconds")?;
    for e in log {
        writeln!(out, "{},{},{:.3}", e.epoch, e.mean_train_loss, e.wall_seconds)?;
    }
    out.flush()
}

pub struct TrainedNetwork {
    pub params: NetworkParameters,
    pub log: Vec<EpochLoss>,
}

fn check_dimension(data: &EncodedSet, expected: usize) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if data.dimension() != expected {
        return Err(TrainError::Network(NetworkError::DimensionMismatch {
            expected,
            actual: data.dimension(),
        }));
    }
    Ok(())
}

/// Epoch order: identity, or a fresh seeded permutation per epoch.
pub(crate) struct BatchOrder {
    order: Vec<usize>,
    rng: rand_chacha::ChaCha8Rng,
    shuffle: bool,
}

impl BatchOrder {
    pub(crate) fn new(n: usize, seed: u64, shuffle: bool) -> Self {
        BatchOrder {
            order: (0..n).collect(),
            rng: stream(seed, Purpose::Shuffle),
            shuffle,
        }
    }

    pub(crate) fn next_epoch(&mut self) -> &[usize] {
        if self.shuffle {
            self.order.shuffle(&mut self.rng);
        }
        &self.order
    }
}

/// Per-column root-mean-square of the nonzero training values, floored at
/// 1 so count columns keep unit scale.
pub fn input_scales(data: &EncodedSet) -> Vec<f64> {
    let d = data.dimension();
    let mut ss = vec![0.0; d];
    let mut n = vec![0usize; d];
    for x in &data.features {
        for (i, v) in x.iter() {
            ss[i] += v * v;
            n[i] += 1;
        }
    }
    ss.iter()
        .zip(&n)
        .map(|(s, &k)| if k == 0 { 1.0 } else { (s / k as f64).sqrt().max(1.0) })
        .collect()
}

pub(crate) fn rescaled(data: &EncodedSet, scales: &[f64]) -> EncodedSet {
    let features = data
        .features
        .iter()
        .map(|x| {
            let pairs = x.iter().map(|(i, v)| (i, v / scales[i])).collect();
            SparseFeatureVector::from_pairs(x.dimension(), pairs)
        })
        .collect();
    EncodedSet {
        features,
        targets: data.targets.clone(),
    }
}

/// Turns weights fitted on `x / s` into weights for raw `x`.
fn fold_input_scales(params: &mut NetworkParameters, scales: &[f64]) {
    let h = params.hidden();
    let c = NUM_CATEGORIES;
    for (i, s) in scales.iter().enumerate().filter(|(_, s)| **s != 1.0) {
        for w in &mut params.weight_mut(0)[i * h..(i + 1) * h] {
            *w /= s;
        }
        for w in &mut params.weight_mut(HIDDEN_LAYERS)[(h + i) * c..(h + i + 1) * c] {
            *w /= s;
        }
    }
}

/// Fits the network on pre-encoded data.
pub fn fit_network(
    data: &EncodedSet,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<TrainedNetwork, TrainError> {
    config.validate()?;
    check_dimension(data, arch.input_dim)?;
    let scales = config.standardize_inputs.then(|| input_scales(data));
    let scaled;
    let data = match &scales {
        Some(s) if s.iter().any(|v| *v != 1.0) => {
            scaled = rescaled(data, s);
            &scaled
        }
        _ => data,
    };
    let mut params = NetworkParameters::init(arch, config.seed)?;
    let scale = config.target_scale.unwrap_or_else(|| data.rms_target());
    params.output_scale = scale;

    let mut state = AdamState::new(params.num_parameters(), config.adam);
    let mut dropout = DropoutConfig::train(arch.dropout_rate, config.seed).sampler();
    let mut batches = BatchOrder::new(data.len(), config.seed, config.shuffle);
    let mut grad = params.gradient_buffer();
    let mut log = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let order = batches.next_epoch().to_vec();
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let norm = 1.0 / (scale * scale * batch.len() as f64);
            for &i in batch {
                let (y, trace) = forward(&params, &data.features[i], &mut dropout, true)?;
                let trace = trace.expect("trace requested");
                let mut g = [0.0; NUM_CATEGORIES];
                for c in 0..NUM_CATEGORIES {
                    if config.loss_mask[c] {
                        let r = y[c] - data.targets[i][c];
                        loss_sum += r * r;
                        g[c] = 2.0 * r * norm;
                    }
                }
                backward_into(&params, &trace, &g, &mut grad)?;
            }
            adam_step(params.values_mut(), &grad, &mut state)?;
        }
        log.push(EpochLoss {
            epoch,
            mean_train_loss: loss_sum / data.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let Some(s) = &scales {
        fold_input_scales(&mut params, s);
    }
    Ok(TrainedNetwork { params, log })
}

/// Encodes `train` and fits one seven-output network.
pub fn train_network(
    train: &[ClaimsRecord],
    vocab: &CodeVocabulary,
    quarters: usize,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<TrainedNetwork, TrainError> {
    let data = EncodedSet::from_records(train, vocab, quarters)?;
    fit_network(&data, config, arch)
}

/// A combined model plus one loss log per member.
pub struct TrainedEnsemble {
    pub model: Ensemble,
    pub logs: Vec<Vec<EpochLoss>>,
}

/// Seven networks, member `c` fitted on category `c` only (seed `seed + c`).
pub fn fit_per_category(
    data: &EncodedSet,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<TrainedEnsemble, TrainError> {
    let mut members = Vec::with_capacity(NUM_CATEGORIES);
    let mut logs = Vec::with_capacity(NUM_CATEGORIES);
    for c in 0..NUM_CATEGORIES {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(c as u64),
            ..config.mask_only(c)
        };
        let t = fit_network(data, &cfg, arch)?;
        members.push(SavedModel::Network(t.params));
        logs.push(t.log);
    }
    Ok(TrainedEnsemble {
        model: Ensemble::new(members, CombineRule::PerCategory),
        logs,
    })
}

/// Fits `k` networks with seeds `seed, seed+1, …` and averages them.
pub fn fit_ensemble(
    data: &EncodedSet,
    config: &TrainConfig,
    arch: Architecture,
    k: usize,
    mode: CategoryMode,
) -> Result<TrainedEnsemble, TrainError> {
    if k == 0 {
        return Err(TrainError::InvalidConfig("ensemble size must be at least 1".into()));
    }
    let mut members = Vec::with_capacity(k);
    let mut logs = Vec::new();
    for i in 0..k {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..*config
        };
        match mode {
            CategoryMode::Joint => {
                let t = fit_network(data, &cfg, arch)?;
                members.push(SavedModel::Network(t.params));
                logs.push(t.log);
            }
            CategoryMode::Separate => {
                let t = fit_per_category(data, &cfg, arch)?;
                members.push(SavedModel::Ensemble(t.model));
                logs.extend(t.logs);
            }
        }
    }
    Ok(TrainedEnsemble {
        model: Ensemble::new(members, CombineRule::Mean),
        logs,
    })
}

pub fn train_ensemble(
    train: &[ClaimsRecord],
    vocab: &CodeVocabulary,
    quarters: usize,
    config: &TrainConfig,
    arch: Architecture,
    k: usize,
) -> Result<TrainedEnsemble, TrainError> {
    let data = EncodedSet::from_records(train, vocab, quarters)?;
    fit_ensemble(&data, config, arch, k, CategoryMode::Joint)
}

/// Fits `k` ridge models with seeds `seed, seed+1, …` and averages them.
pub fn fit_ridge_ensemble(data: &EncodedSet, config: &TrainConfig, k: usize) -> Result<TrainedEnsemble, TrainError> {
    if k == 0 {
        return Err(TrainError::InvalidConfig("ensemble size must be at least 1".into()));
    }
    let mut members = Vec::with_capacity(k);
    let mut logs = Vec::with_capacity(k);
    for i in 0..k {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..*config
        };
        let t = fit_ridge(data, &cfg)?;
        members.push(SavedModel::Ridge(t.params));
        logs.push(t.log);
    }
    Ok(TrainedEnsemble {
        model: Ensemble::new(members, CombineRule::Mean),
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims_data::{generate_synthetic, SyntheticSpec};
    use crate::model::CostModel;
    use crate::network;
    use crate::vocab_encoder::build_vocabulary;

    fn small_set(n: usize, seed: u64) -> (EncodedSet, usize) {
        let d = generate_synthetic(&SyntheticSpec {
            n_patients: n,
            seed,
            ..Default::default()
        })
        .unwrap();
        let v = build_vocabulary(&d.records, 5).unwrap();
        let set = EncodedSet::from_records(&d.records, &v, 24).unwrap();
        let dim = v.dimension(24);
        (set, dim)
    }

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            ..TrainConfig::network(seed)
        }
    }

    #[test]
    fn zero_epochs_return_initialisation() {
        let (data, d) = small_set(30, 1);
        let cfg = TrainConfig {
            epochs: 0,
            standardize_inputs: false,
            ..TrainConfig::network(4)
        };
        let t = fit_network(&data, &cfg, Architecture::new(d)).unwrap();
        let init = NetworkParameters::init(Architecture::new(d), 4).unwrap();
        assert_eq!(t.params.values(), init.values());
        assert!(t.log.is_empty());
    }

    #[test]
    fn folded_scales_reproduce_scaled_predictions() {
        let (data, d) = small_set(30, 2);
        let scales = input_scales(&data);
        assert!(scales.iter().any(|s| *s > 1.0));
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::network(4) };
        let folded = fit_network(&data, &cfg, Architecture::new(d)).unwrap().params;
        let mut init = NetworkParameters::init(Architecture::new(d), 4).unwrap();
        init.output_scale = folded.output_scale;
        let scaled = rescaled(&data, &scales);
        for (raw, x) in data.features.iter().zip(&scaled.features) {
            let a = network::predict(&folded, raw).unwrap();
            let b = network::predict(&init, x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (data, d) = small_set(40, 2);
        let a = fit_network(&data, &quick(9), Architecture::new(d)).unwrap();
        let b = fit_network(&data, &quick(9), Architecture::new(d)).unwrap();
        assert_eq!(network::to_bytes(&a.params), network::to_bytes(&b.params));
        let c = fit_network(&data, &quick(10), Architecture::new(d)).unwrap();
        assert_ne!(a.params.values(), c.params.values());
    }

    #[test]
    fn missing_target_and_empty_set_rejected() {
        let d = generate_synthetic(&SyntheticSpec { n_patients: 3, ..Default::default() }).unwrap();
        let v = build_vocabulary(&d.records, 0).unwrap();
        let mut records = d.records.clone();
        records[1].target = None;
        let err = EncodedSet::from_records(&records, &v, 24).unwrap_err();
        assert!(matches!(err, TrainError::MissingTarget(id) if id == "P000001"));
        assert!(matches!(
            EncodedSet::from_records(&[], &v, 24),
            Err(TrainError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn single_member_ensemble_equals_single_model() {
        let (data, d) = small_set(30, 3);
        let single = fit_network(&data, &quick(5), Architecture::new(d)).unwrap();
        let ens = fit_ensemble(&data, &quick(5), Architecture::new(d), 1, CategoryMode::Joint).unwrap();
        for x in &data.features {
            assert_eq!(
                ens.model.predict(x).unwrap(),
                network::predict(&single.params, x).unwrap()
            );
        }
    }

    #[test]
    fn separate_mode_trains_one_member_per_category() {
        let (data, d) = small_set(20, 4);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::network(1) };
        let t = fit_per_category(&data, &cfg, Architecture::new(d)).unwrap();
        assert_eq!(t.model.members.len(), NUM_CATEGORIES);
        assert_eq!(t.model.rule, CombineRule::PerCategory);
        let y = t.model.predict(&data.features[0]).unwrap();
        for (c, m) in t.model.members.iter().enumerate() {
            assert_eq!(y[c], m.predict(&data.features[0]).unwrap()[c]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::network(0) }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::ridge(0) }.validate().is_err());
        assert!(TrainConfig { loss_mask: [false; 7], ..TrainConfig::network(0) }.validate().is_err());
        assert_eq!(TrainConfig::ridge(0).lambda, 0.1);
        assert_eq!(TrainConfig::ridge(0).batch_size, 128);
        assert_eq!(TrainConfig::network(0).batch_size, 32);
        assert_eq!(TrainConfig::network(0).epochs, 25);
    }
}
