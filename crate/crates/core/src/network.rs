//! Skip-connection feedforward network with hand-written reverse mode.
//!
//! Four hidden ReLU layers of width `H` map the sparse input `x` to `h4`;
//! the output layer sees the concatenation `[h4; x]` and produces seven
//! ReLU-rectified cost predictions. Dropout (inverted convention) applies to
//! the hidden activations only.
//!
//! All weights live in one flat buffer, in file order:
//! `W1 (d×H), b1, W2 (H×H), b2, W3, b3, W4, b4, W5 ((H+d)×C), b5`, each
//! matrix row-major with one row per input unit.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::claims_data::NUM_CATEGORIES;
use crate::rng::{stream, Purpose};
use crate::vocab_encoder::SparseFeatureVector;

pub const DEFAULT_HIDDEN: usize = 50;
pub const DEFAULT_DROPOUT: f64 = 0.25;
pub const HIDDEN_LAYERS: usize = 4;
/// Output column of incapacity compensation, excluded from totals.
pub const INCAPACITY_INDEX: usize = 5;

const LAYERS: usize = HIDDEN_LAYERS + 1;
const MAGIC: &[u8; 8] = b"CCNET\0\0\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 3 * 8 + 2 * 8;

pub type Output = [f64; NUM_CATEGORIES];

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input dimension mismatch: expected d = {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("forward trace does not match these parameters")]
    StaleTrace,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a network model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// Shape and regularisation of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: DEFAULT_HIDDEN,
            dropout_rate: DEFAULT_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(NetworkError::InvalidArchitecture(
                "input and hidden widths must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn fan_in(&self, layer: usize) -> usize {
        match layer {
            0 => self.input_dim,
            l if l < HIDDEN_LAYERS => self.hidden,
            _ => self.hidden + self.input_dim,
        }
    }

    fn fan_out(&self, layer: usize) -> usize {
        if layer < HIDDEN_LAYERS {
            self.hidden
        } else {
            NUM_CATEGORIES
        }
    }

    /// Offsets of (weights, bias) per layer and the total length.
    fn layout(&self) -> ([(usize, usize); LAYERS], usize) {
        let mut offsets = [(0, 0); LAYERS];
        let mut at = 0;
        for (l, slot) in offsets.iter_mut().enumerate() {
            let w = at;
            at += self.fan_in(l) * self.fan_out(l);
            let b = at;
            at += self.fan_out(l);
            *slot = (w, b);
        }
        (offsets, at)
    }

    pub fn num_parameters(&self) -> usize {
        self.layout().1
    }
}

#[derive(Debug, Clone)]
pub struct NetworkParameters {
    arch: Architecture,
    /// Predictions are `output_scale · relu(z5)`; the trainer sets this to
    /// the cost unit the network was fitted in.
    pub output_scale: f64,
    values: Vec<f64>,
    offsets: [(usize, usize); LAYERS],
    revision: u64,
}

/// Equality of architecture, scale and weights; the edit counter is ignored.
impl PartialEq for NetworkParameters {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.output_scale == other.output_scale && self.values == other.values
    }
}

impl NetworkParameters {
    pub fn zeros(arch: Architecture) -> Result<Self, NetworkError> {
        arch.validate()?;
        let (offsets, len) = arch.layout();
        Ok(NetworkParameters {
            arch,
            output_scale: 1.0,
            values: vec![0.0; len],
            offsets,
            revision: 0,
        })
    }

    /// Uniform initialisation with variance `2 / fan_in`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NetworkError> {
        let mut p = Self::zeros(arch)?;
        let mut rng = stream(seed, Purpose::Init);
        for l in 0..LAYERS {
            let limit = (6.0 / arch.fan_in(l) as f64).sqrt();
            for w in p.weight_mut(l) {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    pub fn from_values(arch: Architecture, output_scale: f64, values: Vec<f64>) -> Result<Self, NetworkError> {
        let mut p = Self::zeros(arch)?;
        if values.len() != p.values.len() {
            return Err(NetworkError::Corrupt(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        p.output_scale = output_scale;
        Ok(p)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.arch.hidden
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; invalidates outstanding forward traces.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.values
    }

    pub fn num_parameters(&self) -> usize {
        self.values.len()
    }

    /// Weights of layer `l` (0-based, 4 is the output layer).
    pub fn weight(&self, l: usize) -> &[f64] {
        let (w, b) = self.offsets[l];
        &self.values[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets[l];
        &self.values[b..b + self.arch.fan_out(l)]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        self.revision += 1;
        let (w, b) = self.offsets[l];
        &mut self.values[w..b]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        self.revision += 1;
        let (_, b) = self.offsets[l];
        let n = self.arch.fan_out(l);
        &mut self.values[b..b + n]
    }

    pub fn all_finite(&self) -> bool {
        self.output_scale.is_finite() && self.values.iter().all(|v| v.is_finite())
    }

    pub fn gradient_buffer(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Offset and length of a layer's weight block in the flat buffer.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let (w, b) = self.offsets[l];
        w..b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub rate: f64,
    pub mode: DropoutMode,
    pub seed: u64,
}

impl DropoutConfig {
    pub fn inference() -> Self {
        DropoutConfig {
            rate: 0.0,
            mode: DropoutMode::Inference,
            seed: 0,
        }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        DropoutConfig {
            rate,
            mode: DropoutMode::Train,
            seed,
        }
    }

    pub fn sampler(&self) -> Dropout {
        Dropout {
            rate: self.rate,
            mode: self.mode,
            rng: stream(self.seed, Purpose::Dropout),
        }
    }
}

/// Stateful mask source; successive forward calls draw fresh masks.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mode: DropoutMode,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn inference() -> Self {
        DropoutConfig::inference().sampler()
    }

    fn active(&self) -> bool {
        self.mode == DropoutMode::Train && self.rate > 0.0
    }

    /// Per-unit multipliers: 0 for dropped units, `1/(1-rate)` for kept ones.
    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for reverse mode.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    x: SparseFeatureVector,
    pre: [Vec<f64>; HIDDEN_LAYERS],
    act: [Vec<f64>; HIDDEN_LAYERS],
    /// Empty when dropout was inactive.
    masks: [Vec<f64>; HIDDEN_LAYERS],
    out_pre: Output,
    revision: u64,
    arch: (usize, usize),
}

impl ForwardTrace {
    pub fn input(&self) -> &SparseFeatureVector {
        &self.x
    }

    /// Hidden pre-activation of layer `l` (0-based).
    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }

    pub fn activation(&self, l: usize) -> &[f64] {
        &self.act[l]
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Runs the network. The first layer touches only rows of `W1` (and of the
/// skip block of `W5`) at `x`'s nonzeros.
pub fn forward(
    params: &NetworkParameters,
    x: &SparseFeatureVector,
    dropout: &mut Dropout,
    keep_trace: bool,
) -> Result<(Output, Option<ForwardTrace>), NetworkError> {
    let d = params.input_dim();
    if x.dimension() != d {
        return Err(NetworkError::DimensionMismatch {
            expected: d,
            actual: x.dimension(),
        });
    }
    let h = params.hidden();
    let active = dropout.active();
    let mut pre: [Vec<f64>; HIDDEN_LAYERS] = Default::default();
    let mut act: [Vec<f64>; HIDDEN_LAYERS] = Default::default();
    let mut masks: [Vec<f64>; HIDDEN_LAYERS] = Default::default();

    for l in 0..HIDDEN_LAYERS {
        let w = params.weight(l);
        let mut z = params.bias(l).to_vec();
        if l == 0 {
            for (i, xi) in x.iter() {
                let row = &w[i * h..(i + 1) * h];
                for (zj, wij) in z.iter_mut().zip(row) {
                    *zj += xi * wij;
                }
            }
        } else {
            for (i, &ai) in act[l - 1].iter().enumerate() {
                let row = &w[i * h..(i + 1) * h];
                for (zj, wij) in z.iter_mut().zip(row) {
                    *zj += ai * wij;
                }
            }
        }
        let mut a: Vec<f64> = z.iter().map(|&v| relu(v)).collect();
        if active {
            let m = dropout.mask(h);
            for (aj, mj) in a.iter_mut().zip(&m) {
                *aj *= mj;
            }
            masks[l] = m;
        }
        pre[l] = z;
        act[l] = a;
    }

    let c = NUM_CATEGORIES;
    let w5 = params.weight(HIDDEN_LAYERS);
    let mut out_pre: Output = [0.0; NUM_CATEGORIES];
    out_pre.copy_from_slice(params.bias(HIDDEN_LAYERS));
    for (j, &aj) in act[HIDDEN_LAYERS - 1].iter().enumerate() {
        for (k, o) in out_pre.iter_mut().enumerate() {
            *o += aj * w5[j * c + k];
        }
    }
    for (i, xi) in x.iter() {
        let row = &w5[(h + i) * c..(h + i + 1) * c];
        for (o, wik) in out_pre.iter_mut().zip(row) {
            *o += xi * wik;
        }
    }
    let y = out_pre.map(|v| params.output_scale * relu(v));
    let trace = keep_trace.then(|| ForwardTrace {
        x: x.clone(),
        pre,
        act,
        masks,
        out_pre,
        revision: params.revision,
        arch: (d, h),
    });
    Ok((y, trace))
}

/// Inference-mode prediction.
pub fn predict(params: &NetworkParameters, x: &SparseFeatureVector) -> Result<Output, NetworkError> {
    forward(params, x, &mut Dropout::inference(), false).map(|(y, _)| y)
}

/// Total cost excluding incapacity compensation.
pub fn predict_total(y_hat: &Output) -> f64 {
    y_hat
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != INCAPACITY_INDEX)
        .map(|(_, v)| v)
        .sum()
}

/// Weights selecting the total-cost output (all ones except incapacity).
pub fn total_cost_selector() -> Output {
    let mut s = [1.0; NUM_CATEGORIES];
    s[INCAPACITY_INDEX] = 0.0;
    s
}

fn check_trace(params: &NetworkParameters, trace: &ForwardTrace) -> Result<(), NetworkError> {
    if trace.revision != params.revision || trace.arch != (params.input_dim(), params.hidden()) {
        return Err(NetworkError::StaleTrace);
    }
    Ok(())
}

/// Reverse pass. Adds `∂L/∂θ` into `grad` (if given) and returns `∂L/∂x` at
/// the input positions `input_at` (if given).
fn backprop(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    grad_output: &Output,
    mut grad: Option<&mut [f64]>,
    input_at: Option<&[usize]>,
) -> Result<Option<Vec<f64>>, NetworkError> {
    check_trace(params, trace)?;
    let h = params.hidden();
    let c = NUM_CATEGORIES;
    let x = &trace.x;

    let mut delta_out = [0.0; NUM_CATEGORIES];
    for k in 0..c {
        if trace.out_pre[k] > 0.0 {
            delta_out[k] = grad_output[k] * params.output_scale;
        }
    }

    let w5 = params.weight(HIDDEN_LAYERS);
    if let Some(g) = grad.as_deref_mut() {
        let (wo, bo) = params.offsets[HIDDEN_LAYERS];
        for k in 0..c {
            g[bo + k] += delta_out[k];
        }
        for (j, &aj) in trace.act[HIDDEN_LAYERS - 1].iter().enumerate() {
            if aj != 0.0 {
                for k in 0..c {
                    g[wo + j * c + k] += aj * delta_out[k];
                }
            }
        }
        for (i, xi) in x.iter() {
            let base = wo + (h + i) * c;
            for k in 0..c {
                g[base + k] += xi * delta_out[k];
            }
        }
    }

    // Gradient w.r.t. the last hidden activation.
    let mut d_act: Vec<f64> = (0..h)
        .map(|j| (0..c).map(|k| w5[j * c + k] * delta_out[k]).sum())
        .collect();
    let mut dz_first = Vec::new();

    for l in (0..HIDDEN_LAYERS).rev() {
        let mask = &trace.masks[l];
        let dz: Vec<f64> = (0..h)
            .map(|j| {
                if trace.pre[l][j] > 0.0 {
                    let m = if mask.is_empty() { 1.0 } else { mask[j] };
                    d_act[j] * m
                } else {
                    0.0
                }
            })
            .collect();
        let w = params.weight(l);
        if let Some(g) = grad.as_deref_mut() {
            let (wo, bo) = params.offsets[l];
            for j in 0..h {
                g[bo + j] += dz[j];
            }
            if l == 0 {
                for (i, xi) in x.iter() {
                    let base = wo + i * h;
                    for j in 0..h {
                        g[base + j] += xi * dz[j];
                    }
                }
            } else {
                for (i, &ai) in trace.act[l - 1].iter().enumerate() {
                    if ai != 0.0 {
                        let base = wo + i * h;
                        for j in 0..h {
                            g[base + j] += ai * dz[j];
                        }
                    }
                }
            }
        }
        if l > 0 {
            d_act = (0..h)
                .map(|i| {
                    let row = &w[i * h..(i + 1) * h];
                    row.iter().zip(&dz).map(|(a, b)| a * b).sum()
                })
                .collect();
        } else {
            dz_first = dz;
        }
    }

    let Some(indices) = input_at else {
        return Ok(None);
    };
    let w1 = params.weight(0);
    let dx = indices
        .iter()
        .map(|&i| {
            let through_hidden: f64 = w1[i * h..(i + 1) * h]
                .iter()
                .zip(&dz_first)
                .map(|(a, b)| a * b)
                .sum();
            let skip: f64 = w5[(h + i) * c..(h + i + 1) * c]
                .iter()
                .zip(&delta_out)
                .map(|(a, b)| a * b)
                .sum();
            through_hidden + skip
        })
        .collect();
    Ok(Some(dx))
}

/// Parameter gradient for upstream `grad_output = ∂L/∂ŷ`, same layout as
/// [`NetworkParameters::values`].
pub fn backward(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    grad_output: &Output,
) -> Result<Vec<f64>, NetworkError> {
    let mut g = params.gradient_buffer();
    backprop(params, trace, grad_output, Some(&mut g), None)?;
    Ok(g)
}

/// Accumulating variant of [`backward`] for minibatch reduction.
pub fn backward_into(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    grad_output: &Output,
    grad: &mut [f64],
) -> Result<(), NetworkError> {
    if grad.len() != params.num_parameters() {
        return Err(NetworkError::DimensionMismatch {
            expected: params.num_parameters(),
            actual: grad.len(),
        });
    }
    backprop(params, trace, grad_output, Some(grad), None).map(|_| ())
}

/// `∂(grad_output · ŷ)/∂x` at each nonzero of the traced input, in index
/// order.
pub fn input_gradient(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    grad_output: &Output,
) -> Result<Vec<f64>, NetworkError> {
    input_gradient_at(params, trace, grad_output, trace.x.indices())
}

/// `∂(grad_output · ŷ)/∂x_i` for each listed input position `i`, which need
/// not be nonzero in the traced input.
pub fn input_gradient_at(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    grad_output: &Output,
    indices: &[usize],
) -> Result<Vec<f64>, NetworkError> {
    if let Some(&i) = indices.iter().find(|&&i| i >= params.input_dim()) {
        return Err(NetworkError::DimensionMismatch {
            expected: params.input_dim(),
            actual: i + 1,
        });
    }
    Ok(backprop(params, trace, grad_output, None, Some(indices))?.expect("input gradient requested"))
}

/// Encodes the binary model format: header (magic, version, d, H, C,
/// dropout rate, output scale) then little-endian f64 weights in layer order.
pub fn to_bytes(params: &NetworkParameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.input_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(params.hidden() as u64).to_le_bytes());
    out.extend_from_slice(&(NUM_CATEGORIES as u64).to_le_bytes());
    out.extend_from_slice(&params.arch.dropout_rate.to_le_bytes());
    out.extend_from_slice(&params.output_scale.to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetworkParameters, NetworkError> {
    if bytes.len() < HEADER_LEN {
        return Err(NetworkError::Corrupt(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NetworkError::UnsupportedVersion(version));
    }
    let d = u64_at(12) as usize;
    let hidden = u64_at(20) as usize;
    let c = u64_at(28) as usize;
    if c != NUM_CATEGORIES {
        return Err(NetworkError::Corrupt(format!("expected C = 7, got {c}")));
    }
    let arch = Architecture {
        input_dim: d,
        hidden,
        dropout_rate: f64_at(36),
    };
    arch.validate()
        .map_err(|e| NetworkError::Corrupt(e.to_string()))?;
    let output_scale = f64_at(44);
    let n = arch.num_parameters();
    let expected = HEADER_LEN + 8 * n;
    if bytes.len() != expected {
        return Err(NetworkError::Corrupt(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let p = NetworkParameters::from_values(arch, output_scale, values)?;
    if !p.all_finite() {
        return Err(NetworkError::Corrupt("non-finite weight".into()));
    }
    Ok(p)
}

pub fn serialize(params: &NetworkParameters, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn deserialize(path: impl AsRef<Path>) -> Result<NetworkParameters, NetworkError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(d: usize, h: usize) -> Architecture {
        Architecture {
            input_dim: d,
            hidden: h,
            dropout_rate: 0.0,
        }
    }

    fn random_params(d: usize, h: usize, seed: u64) -> NetworkParameters {
        let mut p = NetworkParameters::init(arch(d, h), seed).unwrap();
        let mut rng = stream(seed ^ 0xabc, Purpose::Init);
        for b in 0..LAYERS {
            for v in p.bias_mut(b) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    /// Dense reference forward pass written from the layer equations.
    fn dense_forward(p: &NetworkParameters, x: &[f64]) -> Output {
        let h = p.hidden();
        let mut a = x.to_vec();
        for l in 0..HIDDEN_LAYERS {
            let w = p.weight(l);
            let mut z = p.bias(l).to_vec();
            for (i, ai) in a.iter().enumerate() {
                for j in 0..h {
                    z[j] += ai * w[i * h + j];
                }
            }
            a = z.into_iter().map(relu).collect();
        }
        let mut cat = a;
        cat.extend_from_slice(x);
        let w = p.weight(HIDDEN_LAYERS);
        let mut y = [0.0; NUM_CATEGORIES];
        y.copy_from_slice(p.bias(HIDDEN_LAYERS));
        for (j, aj) in cat.iter().enumerate() {
            for k in 0..NUM_CATEGORIES {
                y[k] += aj * w[j * NUM_CATEGORIES + k];
            }
        }
        y.map(|v| p.output_scale * relu(v))
    }

    #[test]
    fn zero_network_predicts_zero() {
        let p = NetworkParameters::zeros(arch(5, 3)).unwrap();
        let x = SparseFeatureVector::from_dense(&[1.0, 0.0, 2.0, 0.0, 3.0]);
        assert_eq!(predict(&p, &x).unwrap(), [0.0; 7]);
    }

    #[test]
    fn hand_computed_two_feature_network() {
        // d = 2, H = 2. Layer 1: W1 = [[1, -1], [2, 0.5]], b1 = [0, 1].
        // Layers 2-4 are the identity with zero bias. Output: only category 0
        // (medications) and 2 (hospital) have weights.
        let mut p = NetworkParameters::zeros(arch(2, 2)).unwrap();
        p.weight_mut(0).copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        p.bias_mut(0).copy_from_slice(&[0.0, 1.0]);
        for l in 1..4 {
            p.weight_mut(l).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let w5 = p.weight_mut(4);
        // rows: h1, h2, x1, x2; columns: 7 categories
        w5[0] = 1.0; // h1 -> medications
        w5[7 + 2] = 2.0; // h2 -> hospital
        w5[14] = -10.0; // x1 -> medications
        w5[21 + 2] = 1.0; // x2 -> hospital
        p.bias_mut(4)[2] = -1.0;
        // x = (1, 2):
        //   z1 = (1·1 + 2·2 + 0, 1·(-1) + 2·0.5 + 1) = (5, 1), h = (5, 1)
        //   medications = relu(5 - 10) = 0
        //   hospital    = relu(2·1 + 2·1 - 1) = 3
        let x = SparseFeatureVector::from_dense(&[1.0, 2.0]);
        let y = predict(&p, &x).unwrap();
        assert_eq!(y, [0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        // x = (3, 0): z1 = (3, -3 + 1) -> h = (3, 0); medications = 3 - 30 < 0,
        // hospital = relu(0 + 0 - 1) = 0
        let y = predict(&p, &SparseFeatureVector::from_dense(&[3.0, 0.0])).unwrap();
        assert_eq!(y, [0.0; 7]);
    }

    #[test]
    fn sparse_forward_equals_dense_reference_exactly() {
        let p = random_params(9, 4, 3);
        let dense = [0.0, 1.0, 0.0, 0.0, 2.5, 0.0, -1.0, 0.0, 3.0];
        let sparse = SparseFeatureVector::from_dense(&dense);
        assert_eq!(predict(&p, &sparse).unwrap(), dense_forward(&p, &dense));
    }

    #[test]
    fn zero_dropout_train_equals_inference() {
        let p = random_params(6, 3, 5);
        let x = SparseFeatureVector::from_dense(&[1.0, 0.0, 2.0, 1.0, 0.0, 1.0]);
        let mut train = DropoutConfig::train(0.0, 11).sampler();
        let (yt, _) = forward(&p, &x, &mut train, false).unwrap();
        assert_eq!(yt, predict(&p, &x).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = random_params(6, 3, 5);
        let err = predict(&p, &SparseFeatureVector::empty(5)).unwrap_err();
        assert!(matches!(err, NetworkError::DimensionMismatch { expected: 6, actual: 5 }));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = random_params(6, 3, 2);
        let x = SparseFeatureVector::from_dense(&[1.0, 0.0, 2.0, 1.0, 0.0, 1.0]);
        let (_, t) = forward(&p, &x, &mut Dropout::inference(), true).unwrap();
        let g = backward(&p, &t.unwrap(), &[0.0; 7]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_unit_passes_no_gradient() {
        let mut p = random_params(4, 3, 8);
        // Make hidden unit 0 of layer 1 dead for every input.
        for i in 0..4 {
            p.weight_mut(0)[i * 3] = 0.0;
        }
        p.bias_mut(0)[0] = -1.0;
        let x = SparseFeatureVector::from_dense(&[1.0, 2.0, 0.0, 1.0]);
        let (_, t) = forward(&p, &x, &mut Dropout::inference(), true).unwrap();
        let g = backward(&p, &t.unwrap(), &[1.0; 7]).unwrap();
        let (wo, bo) = p.offsets[0];
        assert_eq!(g[bo], 0.0);
        for i in 0..4 {
            assert_eq!(g[wo + i * 3], 0.0);
        }
        // Outgoing weights of the dead unit in layer 2 see zero activation.
        let (w2, _) = p.offsets[1];
        assert!((0..3).all(|j| g[w2 + j] == 0.0));
    }

    #[test]
    fn stale_trace_rejected() {
        let mut p = random_params(4, 3, 8);
        let x = SparseFeatureVector::from_dense(&[1.0, 2.0, 0.0, 1.0]);
        let (_, t) = forward(&p, &x, &mut Dropout::inference(), true).unwrap();
        p.values_mut()[0] += 1.0;
        assert!(matches!(
            backward(&p, &t.unwrap(), &[1.0; 7]),
            Err(NetworkError::StaleTrace)
        ));
    }

    #[test]
    fn predict_total_excludes_incapacity() {
        assert_eq!(predict_total(&[1.0; 7]), 6.0);
        assert_eq!(predict_total(&[0.0; 7]), 0.0);
        let mut y = [0.0; 7];
        y[INCAPACITY_INDEX] = 500.0;
        assert_eq!(predict_total(&y), 0.0);
    }

    #[test]
    fn byte_round_trip_is_bitwise() {
        let mut p = random_params(7, 4, 12);
        p.output_scale = 1234.5;
        let q = from_bytes(&to_bytes(&p)).unwrap();
        assert_eq!(
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(p.architecture(), q.architecture());
        let x = SparseFeatureVector::from_dense(&[0.0, 1.0, 0.0, 3.0, 0.0, 0.0, 2.0]);
        assert_eq!(predict(&p, &x).unwrap(), predict(&q, &x).unwrap());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&random_params(7, 4, 12));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(NetworkError::Corrupt(_))));
        assert!(matches!(from_bytes(&bytes[..10]), Err(NetworkError::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(NetworkError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(NetworkError::UnsupportedVersion(9))));
        let mut bad = bytes;
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(from_bytes(&bad).is_err());
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let p = NetworkParameters::init(arch(400, 50), 1).unwrap();
        let w = p.weight(0);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 400.0;
        assert!((var - target).abs() < 0.05 * target, "{var} vs {target}");
        assert!(p.bias(0).iter().all(|b| *b == 0.0));
    }
}
