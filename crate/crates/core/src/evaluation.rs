//! Agreement metrics, error-by-cost binning and cost-change detection.
//!
//! `mape` is the mean absolute prediction error in Euros, not a percentage
//! error; the name follows the results table it reproduces.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims_data::ClaimsRecord;

pub const DEFAULT_FOLD_THRESHOLD: f64 = 100.0;
pub const DEFAULT_OFFSET: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} true values vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,
    #[error("undefined: true values are constant")]
    ConstantTruth,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("curve needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("bin edges must be strictly increasing")]
    BadEdges,
    #[error("empty evaluation set")]
    EmptyEvaluationSet,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<(), EvalError> {
    if y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < 2 {
        return Err(EvalError::TooShort(y.len()));
    }
    if let Some(i) = y.iter().chain(yhat).position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(i % y.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Sample correlation coefficient.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, yhat)?;
    // Tested directly: the mean of a constant slice need not equal the constant.
    if is_constant(y) || is_constant(yhat) {
        return Err(EvalError::UndefinedCorrelation);
    }
    let (my, mp) = (mean(y), mean(yhat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, yhat)?;
    pearson(&average_ranks(y), &average_ranks(yhat))
}

/// Mean absolute error in Euros.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, yhat)?;
    let my = mean(y);
    let ss_tot: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    if is_constant(y) {
        return Err(EvalError::ConstantTruth);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Cumming's prediction measure: `1 − Σ|y − ŷ| / Σ|y − ȳ|`.
pub fn cpm(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, yhat)?;
    let my = mean(y);
    let dev: f64 = y.iter().map(|a| (a - my).abs()).sum();
    if is_constant(y) {
        return Err(EvalError::ConstantTruth);
    }
    let err: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(1.0 - err / dev)
}

/// The five headline metrics. Correlations are `None` when a constant
/// prediction makes them undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub mape: f64,
    pub r_squared: f64,
    pub cpm: f64,
}

impl MetricSet {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self, EvalError> {
        let optional = |r: Result<f64, EvalError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(EvalError::UndefinedCorrelation) => Ok(None),
            Err(e) => Err(e),
        };
        let r_squared = r_squared(y, yhat)?;
        Ok(MetricSet {
            pearson_r: optional(pearson(y, yhat))?,
            spearman_rho: optional(spearman(y, yhat))?,
            mape: mape(y, yhat)?,
            r_squared,
            cpm: cpm(y, yhat)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeLabel {
    Increasing,
    Decreasing,
    Stable,
}

/// Fold change `(future + offset) / (last + offset)` against `threshold`.
pub fn label_change(last_year_cost: f64, future_cost: f64, threshold: f64, offset: f64) -> ChangeLabel {
    let fc = (future_cost + offset) / (last_year_cost + offset);
    if fc > threshold {
        ChangeLabel::Increasing
    } else if fc < 1.0 / threshold {
        ChangeLabel::Decreasing
    } else {
        ChangeLabel::Stable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeDirection {
    Increase,
    Decrease,
}

impl ChangeDirection {
    pub fn label(self) -> ChangeLabel {
        match self {
            ChangeDirection::Increase => ChangeLabel::Increasing,
            ChangeDirection::Decrease => ChangeLabel::Decreasing,
        }
    }
}

/// Predicted fold change (increase) or its reciprocal (decrease).
pub fn change_scores(
    predicted_totals: &[f64],
    last_year_costs: &[f64],
    direction: ChangeDirection,
    offset: f64,
) -> Vec<f64> {
    predicted_totals
        .iter()
        .zip(last_year_costs)
        .map(|(p, l)| {
            let fc = (p + offset) / (l + offset);
            match direction {
                ChangeDirection::Increase => fc,
                ChangeDirection::Decrease => 1.0 / fc,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Cumulative (threshold, tp, fp) after each group of tied scores, highest
/// score first; "positive" means score ≥ threshold.
fn sweep(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, usize, usize)>, usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(labels.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    Ok((out, pos, neg))
}

/// Precision-recall curve over all distinct thresholds. The area is the
/// step-wise sum `Σ (R_k − R_{k−1}) · P_k`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, EvalError> {
    let (steps, pos, _) = sweep(scores, labels)?;
    let mut points = Vec::with_capacity(steps.len());
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    for (t, tp, fp) in steps {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve { points, auprc })
}

/// ROC curve from (0, 0) through every distinct threshold; trapezoid area.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    let (steps, pos, neg) = sweep(scores, labels)?;
    let mut points = Vec::with_capacity(steps.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    let mut auroc = 0.0;
    for (t, tp, fp) in steps {
        let prev = *points.last().expect("starts at origin");
        let p = RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        auroc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auroc })
}

/// Log-spaced Euro edges `10^0, 10^0.5, …, 10^6`, closed below by 0 and
/// above by `f64::MAX` so every non-negative cost falls in a bin.
pub fn default_cost_edges() -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend((0..=12).map(|k| 10f64.powf(k as f64 * 0.5)));
    edges.push(f64::MAX);
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_abs_error: Option<f64>,
}

fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    if v < edges[0] || v > edges[edges.len() - 1] {
        return None;
    }
    let k = edges.partition_point(|e| *e <= v);
    Some((k - 1).min(edges.len() - 2))
}

fn check_edges(edges: &[f64]) -> Result<(), EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EvalError::BadEdges);
    }
    Ok(())
}

/// Mean absolute error per bin of true cost. Bins are `[e_i, e_{i+1})`, the
/// last one closed; costs outside the edges are not counted.
pub fn error_by_cost(y: &[f64], yhat: &[f64], edges: &[f64]) -> Result<Vec<CostBin>, EvalError> {
    if y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch(y.len(), yhat.len()));
    }
    check_edges(edges)?;
    let mut sums = vec![0.0; edges.len() - 1];
    let mut counts = vec![0usize; edges.len() - 1];
    for (a, b) in y.iter().zip(yhat) {
        if let Some(k) = bin_of(edges, *a) {
            sums[k] += (a - b).abs();
            counts[k] += 1;
        }
    }
    Ok(edges
        .windows(2)
        .zip(sums.iter().zip(&counts))
        .map(|(w, (s, &n))| CostBin {
            lower: w[0],
            upper: w[1],
            count: n,
            mean_abs_error: (n > 0).then(|| s / n as f64),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinDifference {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean of `|ŷ_a − y| − |ŷ_b − y|`; negative where model `a` is better.
    pub mean_difference: Option<f64>,
}

/// Per-bin paired error difference between two models on the same patients.
pub fn paired_error_difference(
    y: &[f64],
    yhat_a: &[f64],
    yhat_b: &[f64],
    edges: &[f64],
) -> Result<Vec<BinDifference>, EvalError> {
    if y.len() != yhat_a.len() || y.len() != yhat_b.len() {
        return Err(EvalError::LengthMismatch(y.len(), yhat_a.len().min(yhat_b.len())));
    }
    check_edges(edges)?;
    let mut sums = vec![0.0; edges.len() - 1];
    let mut counts = vec![0usize; edges.len() - 1];
    for ((t, a), b) in y.iter().zip(yhat_a).zip(yhat_b) {
        if let Some(k) = bin_of(edges, *t) {
            sums[k] += (a - t).abs() - (b - t).abs();
            counts[k] += 1;
        }
    }
    Ok(edges
        .windows(2)
        .zip(sums.iter().zip(&counts))
        .map(|(w, (s, &n))| BinDifference {
            lower: w[0],
            upper: w[1],
            count: n,
            mean_difference: (n > 0).then(|| s / n as f64),
        })
        .collect())
}

/// Keeps records flagged alive or insured.
pub fn filter_eligible(records: Vec<ClaimsRecord>) -> Result<Vec<ClaimsRecord>, EvalError> {
    let kept: Vec<ClaimsRecord> = records.into_iter().filter(|r| r.alive_or_insured).collect();
    if kept.is_empty() {
        return Err(EvalError::EmptyEvaluationSet);
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCurves {
    pub positives: usize,
    pub auprc: f64,
    pub auroc: f64,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub threshold: f64,
    pub offset: f64,
    pub n_increasing: usize,
    pub n_decreasing: usize,
    pub n_stable: usize,
    /// `None` when the set has no patient in that direction.
    pub increase: Option<DirectionCurves>,
    pub decrease: Option<DirectionCurves>,
}

impl ChangeReport {
    pub fn auroc(&self, d: ChangeDirection) -> Option<f64> {
        self.direction(d).map(|c| c.auroc)
    }

    pub fn auprc(&self, d: ChangeDirection) -> Option<f64> {
        self.direction(d).map(|c| c.auprc)
    }

    pub fn direction(&self, d: ChangeDirection) -> Option<&DirectionCurves> {
        match d {
            ChangeDirection::Increase => self.increase.as_ref(),
            ChangeDirection::Decrease => self.decrease.as_ref(),
        }
    }
}

/// Labels each patient from true costs and scores the model's predicted
/// fold change; every patient outside a direction counts as a negative.
pub fn change_analysis(
    true_totals: &[f64],
    predicted_totals: &[f64],
    last_year_costs: &[f64],
    threshold: f64,
    offset: f64,
) -> Result<ChangeReport, EvalError> {
    if true_totals.len() != predicted_totals.len() || true_totals.len() != last_year_costs.len() {
        return Err(EvalError::LengthMismatch(true_totals.len(), predicted_totals.len()));
    }
    let labels: Vec<ChangeLabel> = last_year_costs
        .iter()
        .zip(true_totals)
        .map(|(l, f)| label_change(*l, *f, threshold, offset))
        .collect();
    let count = |c: ChangeLabel| labels.iter().filter(|l| **l == c).count();
    let curves = |d: ChangeDirection| -> Result<Option<DirectionCurves>, EvalError> {
        let y: Vec<bool> = labels.iter().map(|l| *l == d.label()).collect();
        let positives = y.iter().filter(|b| **b).count();
        if positives == 0 || positives == y.len() {
            return Ok(None);
        }
        let s = change_scores(predicted_totals, last_year_costs, d, offset);
        let pr = pr_curve(&s, &y)?;
        let roc = roc_curve(&s, &y)?;
        Ok(Some(DirectionCurves {
            positives,
            auprc: pr.auprc,
            auroc: roc.auroc,
            pr_curve: pr.points,
            roc_curve: roc.points,
        }))
    };
    Ok(ChangeReport {
        threshold,
        offset,
        n_increasing: count(ChangeLabel::Increasing),
        n_decreasing: count(ChangeLabel::Decreasing),
        n_stable: count(ChangeLabel::Stable),
        increase: curves(ChangeDirection::Increase)?,
        decrease: curves(ChangeDirection::Decrease)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n_evaluated: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
    pub error_by_cost_bin: Vec<CostBin>,
    pub change_analysis: Option<ChangeReport>,
}

/// Builds a report from total-cost vectors. Change analysis is skipped when
/// `last_year_costs` is `None`.
pub fn evaluate_totals(
    model: &str,
    true_totals: &[f64],
    predicted_totals: &[f64],
    last_year_costs: Option<&[f64]>,
    edges: &[f64],
) -> Result<EvaluationReport, EvalError> {
    if true_totals.is_empty() {
        return Err(EvalError::EmptyEvaluationSet);
    }
    let metrics = MetricSet::compute(true_totals, predicted_totals)?;
    let bins = error_by_cost(true_totals, predicted_totals, edges)?;
    let change = last_year_costs
        .map(|l| {
            change_analysis(
                true_totals,
                predicted_totals,
                l,
                DEFAULT_FOLD_THRESHOLD,
                DEFAULT_OFFSET,
            )
        })
        .transpose()?;
    Ok(EvaluationReport {
        model: model.to_string(),
        n_evaluated: true_totals.len(),
        metrics,
        error_by_cost_bin: bins,
        change_analysis: change,
    })
}

fn csv_io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_pr_csv(path: impl AsRef<Path>, points: &[PrPoint]) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(csv_io(path))?);
    let mut body = String::from("threshold,precision,recall\n");
    for p in points {
        body.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(csv_io(path))
}

pub fn write_roc_csv(path: impl AsRef<Path>, points: &[RocPoint]) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(csv_io(path))?);
    let mut body = String::from("threshold,fpr,tpr\n");
    for p in points {
        body.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(csv_io(path))
}
