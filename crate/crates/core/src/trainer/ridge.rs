//! Ridge regression fitted by minibatch ADAM.
//!
//! Objective per minibatch `B`:
//! `(1/|B|) Σ_p Σ_c ((ŷ_pc − y_pc)/s)² + λ‖W‖²` in cost units `s`, with
//! the bias unpenalised.

use std::time::Instant;

use super::{adam_step, check_dimension, input_scales, rescaled, AdamState, BatchOrder, EncodedSet, EpochLoss, TrainConfig, TrainError};
use crate::claims_data::{ClaimsRecord, NUM_CATEGORIES};
use crate::network::{NetworkError, Output};
use crate::vocab_encoder::{CodeVocabulary, SparseFeatureVector};

const MAGIC: &[u8; 8] = b"CCRIDGE\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 2 * 8 + 2 * 8;

/// Linear cost model `ŷ = s · (Wᵀx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeParameters {
    input_dim: usize,
    /// Weights (d×C, row-major) followed by the C biases, in cost units.
    values: Vec<f64>,
    pub output_scale: f64,
    /// Penalty the model was fitted with.
    pub lambda: f64,
}

impl RidgeParameters {
    pub fn zeros(input_dim: usize, lambda: f64) -> Self {
        RidgeParameters {
            input_dim,
            values: vec![0.0; (input_dim + 1) * NUM_CATEGORIES],
            output_scale: 1.0,
            lambda,
        }
    }

    /// Builds a model from Euro-scale weights (d×C row-major) and biases.
    pub fn from_effective(input_dim: usize, weights: &[f64], bias: &[f64], lambda: f64) -> Self {
        assert_eq!(weights.len(), input_dim * NUM_CATEGORIES, "weight shape");
        assert_eq!(bias.len(), NUM_CATEGORIES, "bias shape");
        let mut values = weights.to_vec();
        values.extend_from_slice(bias);
        RidgeParameters {
            input_dim,
            values,
            output_scale: 1.0,
            lambda,
        }
    }

    pub fn set_bias(&mut self, bias: &[f64; NUM_CATEGORIES]) {
        let n = self.input_dim * NUM_CATEGORIES;
        for (b, v) in self.values[n..].iter_mut().zip(bias) {
            *b = v / self.output_scale;
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Weights in cost units; multiply by `output_scale` for Euros.
    pub fn weights(&self) -> &[f64] {
        &self.values[..self.input_dim * NUM_CATEGORIES]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.input_dim * NUM_CATEGORIES..]
    }

    /// Euro-scale weight of input `i` on category `c`.
    pub fn effective_weight(&self, i: usize, c: usize) -> f64 {
        self.output_scale * self.values[i * NUM_CATEGORIES + c]
    }

    pub fn effective_bias(&self, c: usize) -> f64 {
        self.output_scale * self.bias()[c]
    }

    pub fn predict(&self, x: &SparseFeatureVector) -> Result<Output, NetworkError> {
        if x.dimension() != self.input_dim {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.dimension(),
            });
        }
        let mut z = [0.0; NUM_CATEGORIES];
        z.copy_from_slice(self.bias());
        let w = self.weights();
        for (i, xi) in x.iter() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += xi * w[i * NUM_CATEGORIES + c];
            }
        }
        Ok(z.map(|v| v * self.output_scale))
    }

    /// `∂(selector · ŷ)/∂x_i` at each listed position: the selected weights.
    pub fn input_gradient_at(
        &self,
        x: &SparseFeatureVector,
        indices: &[usize],
        selector: &Output,
    ) -> Result<Vec<f64>, NetworkError> {
        if x.dimension() != self.input_dim {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.dimension(),
            });
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.input_dim) {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim,
                actual: i + 1,
            });
        }
        Ok(indices
            .iter()
            .map(|&i| {
                (0..NUM_CATEGORIES)
                    .map(|c| selector[c] * self.effective_weight(i, c))
                    .sum()
            })
            .collect())
    }
}

pub struct TrainedRidge {
    pub params: RidgeParameters,
    pub log: Vec<EpochLoss>,
}

pub fn fit_ridge(data: &EncodedSet, config: &TrainConfig) -> Result<TrainedRidge, TrainError> {
    config.validate()?;
    check_dimension(data, data.dimension())?;
    let d = data.dimension();
    let c = NUM_CATEGORIES;
    let mut params = RidgeParameters::zeros(d, config.lambda);
    let scale = config.target_scale.unwrap_or_else(|| data.rms_target());
    params.output_scale = scale;
    let n_weights = d * c;
    // Fit v = s·w on x/s; the penalty stays λ‖w‖² = λ Σ (v/s)².
    let input_scale = if config.standardize_inputs {
        input_scales(data)
    } else {
        vec![1.0; d]
    };
    let scaled;
    let data = if input_scale.iter().any(|s| *s != 1.0) {
        scaled = rescaled(data, &input_scale);
        &scaled
    } else {
        data
    };
    let inv_s2: Vec<f64> = input_scale.iter().map(|s| 1.0 / (s * s)).collect();

    let mut state = AdamState::new(params.values.len(), config.adam);
    let mut batches = BatchOrder::new(data.len(), config.seed, config.shuffle);
    let mut grad = vec![0.0; params.values.len()];
    let mut log = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let order = batches.next_epoch().to_vec();
        for batch in order.chunks(config.batch_size) {
            for (k, (g, w)) in grad[..n_weights].iter_mut().zip(&params.values[..n_weights]).enumerate() {
                *g = 2.0 * config.lambda * w * inv_s2[k / c];
            }
            grad[n_weights..].fill(0.0);
            let inv_b = 1.0 / batch.len() as f64;
            for &p in batch {
                let x = &data.features[p];
                let y = params.predict(x)?;
                let mut r = [0.0; NUM_CATEGORIES];
                for k in 0..c {
                    if config.loss_mask[k] {
                        let diff = y[k] - data.targets[p][k];
                        loss_sum += diff * diff;
                        r[k] = 2.0 * diff / scale * inv_b;
                    }
                }
                for (i, xi) in x.iter() {
                    for k in 0..c {
                        grad[i * c + k] += xi * r[k];
                    }
                }
                for k in 0..c {
                    grad[n_weights + k] += r[k];
                }
            }
            adam_step(&mut params.values, &grad, &mut state)?;
        }
        log.push(EpochLoss {
            epoch,
            mean_train_loss: loss_sum / data.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    for (i, s) in input_scale.iter().enumerate().filter(|(_, s)| **s != 1.0) {
        for w in &mut params.values[i * c..(i + 1) * c] {
            *w /= s;
        }
    }
    Ok(TrainedRidge { params, log })
}

pub fn train_ridge(
    train: &[ClaimsRecord],
    vocab: &CodeVocabulary,
    quarters: usize,
    config: &TrainConfig,
) -> Result<TrainedRidge, TrainError> {
    let data = EncodedSet::from_records(train, vocab, quarters)?;
    fit_ridge(&data, config)
}

/// Header (magic, version, d, C, λ, output scale) then little-endian f64
/// weights (row-major d×C) and biases.
pub fn ridge_to_bytes(p: &RidgeParameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(NUM_CATEGORIES as u64).to_le_bytes());
    out.extend_from_slice(&p.lambda.to_le_bytes());
    out.extend_from_slice(&p.output_scale.to_le_bytes());
    for v in &p.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn ridge_from_bytes(bytes: &[u8]) -> Result<RidgeParameters, NetworkError> {
    if bytes.len() < HEADER_LEN {
        return Err(NetworkError::Corrupt("ridge file too short for header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NetworkError::UnsupportedVersion(version));
    }
    let word = |o: usize| -> [u8; 8] { bytes[o..o + 8].try_into().expect("8 bytes") };
    let d = u64::from_le_bytes(word(12)) as usize;
    let c = u64::from_le_bytes(word(20)) as usize;
    if c != NUM_CATEGORIES {
        return Err(NetworkError::Corrupt(format!("expected C = 7, got {c}")));
    }
    let lambda = f64::from_le_bytes(word(28));
    let output_scale = f64::from_le_bytes(word(36));
    let n = (d + 1) * NUM_CATEGORIES;
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(NetworkError::Corrupt(format!(
            "expected {} bytes, found {}",
            HEADER_LEN + 8 * n,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if !values.iter().all(|v| v.is_finite()) || !output_scale.is_finite() {
        return Err(NetworkError::Corrupt("non-finite weight".into()));
    }
    Ok(RidgeParameters {
        input_dim: d,
        values,
        output_scale,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_set() -> EncodedSet {
        // Two disjoint feature groups with constant targets.
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for i in 0..40 {
            let j = i % 2;
            features.push(SparseFeatureVector::from_pairs(2, vec![(j, 1.0)]));
            let mut t = [0.0; NUM_CATEGORIES];
            t[2] = if j == 0 { 100.0 } else { 300.0 };
            targets.push(t);
        }
        EncodedSet { features, targets }
    }

    #[test]
    fn lambda_is_echoed_in_model_file() {
        let t = fit_ridge(&one_hot_set(), &TrainConfig { epochs: 1, ..TrainConfig::ridge(0) }).unwrap();
        let bytes = ridge_to_bytes(&t.params);
        let back = ridge_from_bytes(&bytes).unwrap();
        assert_eq!(back.lambda, 0.1);
        assert_eq!(back, t.params);
    }

    #[test]
    fn heavy_penalty_shrinks_weights() {
        let data = one_hot_set();
        let norm = |lambda: f64| {
            let cfg = TrainConfig {
                lambda,
                epochs: 200,
                batch_size: 40,
                adam: super::super::AdamConfig { learning_rate: 0.05, ..Default::default() },
                ..TrainConfig::ridge(0)
            };
            let p = fit_ridge(&data, &cfg).unwrap().params;
            (0..2)
                .flat_map(|i| (0..NUM_CATEGORIES).map(move |c| (i, c)))
                .map(|(i, c)| p.effective_weight(i, c).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let free = norm(0.0);
        let heavy = norm(1e6);
        assert!(free > 1.0, "{free}");
        assert!(heavy < 1e-3 * free, "{heavy} vs {free}");
    }

    #[test]
    fn corrupt_ridge_file() {
        let bytes = ridge_to_bytes(&RidgeParameters::zeros(3, 0.1));
        assert!(ridge_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(matches!(ridge_from_bytes(b"CCNET\0\0\0xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx"), Err(NetworkError::BadMagic)));
    }
}
