//! Integrated-gradients attribution of cost predictions to input features,
//! aggregated over a patient cohort, per code and per quarter.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims_data::{ClaimsRecord, CostCategory, NUM_CATEGORIES};
use crate::evaluation::{label_change, ChangeLabel, DEFAULT_FOLD_THRESHOLD, DEFAULT_OFFSET};
use crate::model::{CostModel, ModelError};
use crate::network::{total_cost_selector, Output};
use crate::vocab_encoder::{encode, CodeVocabulary, SparseFeatureVector};

pub const DEFAULT_STEPS: usize = 300;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("number of integration steps must be at least 1")]
    ZeroSteps,
    #[error("attribution cohort is empty")]
    EmptyCohort,
    #[error("input dimension {actual} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scalar the attribution explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionTarget {
    /// Total cost excluding incapacity compensation.
    #[default]
    TotalCost,
    Category(CostCategory),
}

impl AttributionTarget {
    pub fn selector(self) -> Output {
        match self {
            AttributionTarget::TotalCost => total_cost_selector(),
            AttributionTarget::Category(c) => {
                let mut s = [0.0; NUM_CATEGORIES];
                s[c.index()] = 1.0;
                s
            }
        }
    }

    /// Accepts `total` or `category=<name>`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "total" {
            return Some(AttributionTarget::TotalCost);
        }
        s.strip_prefix("category=")
            .and_then(CostCategory::parse)
            .map(AttributionTarget::Category)
    }

    pub fn label(self) -> String {
        match self {
            AttributionTarget::TotalCost => "total".into(),
            AttributionTarget::Category(c) => format!("category={}", c.name()),
        }
    }
}

/// Denominator of the per-feature normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Cohort patients with a nonzero value at the column.
    #[default]
    Patients,
    /// Summed feature value (event occurrences) at the column.
    Occurrences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionConfig {
    pub steps: usize,
    /// `None` is the all-zero baseline.
    pub baseline: Option<SparseFeatureVector>,
    pub target: AttributionTarget,
    pub normalization: Normalization,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            steps: DEFAULT_STEPS,
            baseline: None,
            target: AttributionTarget::TotalCost,
            normalization: Normalization::Patients,
        }
    }
}

/// Right-endpoint Riemann approximation of integrated gradients along the
/// straight path from the baseline to `x`. Returns `(column, IG)` for every
/// column where `x` and the baseline differ, in column order.
pub fn integrated_gradients(
    model: &dyn CostModel,
    x: &SparseFeatureVector,
    config: &AttributionConfig,
) -> Result<Vec<(usize, f64)>, AttributionError> {
    if config.steps == 0 {
        return Err(AttributionError::ZeroSteps);
    }
    let d = model.input_dim();
    if x.dimension() != d {
        return Err(AttributionError::DimensionMismatch {
            expected: d,
            actual: x.dimension(),
        });
    }
    let zero = SparseFeatureVector::empty(d);
    let base = config.baseline.as_ref().unwrap_or(&zero);
    if base.dimension() != d {
        return Err(AttributionError::DimensionMismatch {
            expected: d,
            actual: base.dimension(),
        });
    }
    let mut support: Vec<usize> = x.indices().iter().chain(base.indices()).copied().collect();
    support.sort_unstable();
    support.dedup();
    let delta: Vec<f64> = support.iter().map(|&i| x.get(i) - base.get(i)).collect();
    let (support, delta): (Vec<usize>, Vec<f64>) = support
        .into_iter()
        .zip(delta)
        .filter(|(_, dv)| *dv != 0.0)
        .unzip();
    if support.is_empty() {
        return Ok(Vec::new());
    }

    let selector = config.target.selector();
    let m = config.steps as f64;
    let mut acc = vec![0.0; support.len()];
    for k in 1..=config.steps {
        let alpha = k as f64 / m;
        let pairs = support
            .iter()
            .zip(&delta)
            .map(|(&i, dv)| (i, base.get(i) + alpha * dv))
            .chain(
                base.iter()
                    .filter(|(i, _)| support.binary_search(i).is_err()),
            )
            .collect();
        let z = SparseFeatureVector::from_pairs(d, pairs);
        let g = model.input_gradient_at(&z, &support, &selector)?;
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += gi;
        }
    }
    Ok(support
        .into_iter()
        .zip(delta.iter().zip(acc))
        .map(|(i, (dv, a))| (i, dv * a / m))
        .collect())
}

/// Per-column cohort statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: usize,
    pub quarter: usize,
    /// Summed IG divided by the cohort size.
    pub mean_ig: f64,
    /// Patients with a nonzero value at this column.
    pub nonzero_count: usize,
    /// Summed feature value at this column.
    pub occurrences: f64,
    pub normalized_ig: f64,
}

/// Per-code (or per-numeric-feature) scores summed over quarter columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeScore {
    pub kind: String,
    pub code: String,
    pub mean_ig: f64,
    /// Patient-quarter pairs with a nonzero value.
    pub nonzero_count: usize,
    pub normalized_ig: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub cohort_size: usize,
    pub quarters: usize,
    pub block_width: usize,
    pub steps: usize,
    pub target: AttributionTarget,
    pub normalization: Normalization,
    /// Columns nonzero for at least one cohort patient, in column order.
    pub columns: Vec<ColumnScore>,
    /// Sorted by normalised score, highest first.
    pub codes: Vec<CodeScore>,
}

impl AttributionReport {
    pub fn top(&self, k: usize) -> &[CodeScore] {
        &self.codes[..k.min(self.codes.len())]
    }

    /// 1-based rank of a code, if it occurs in the cohort.
    pub fn rank_of(&self, kind: &str, code: &str) -> Option<usize> {
        self.codes
            .iter()
            .find(|c| c.kind == kind && c.code == code)
            .map(|c| c.rank)
    }
}

/// Averages integrated gradients over a cohort and aggregates per code.
/// Columns that are zero for the whole cohort are left out rather than
/// reported with an undefined normalisation.
pub fn cohort_attribution(
    model: &dyn CostModel,
    cohort: &[ClaimsRecord],
    vocab: &CodeVocabulary,
    quarters: usize,
    config: &AttributionConfig,
) -> Result<AttributionReport, AttributionError> {
    if cohort.is_empty() {
        return Err(AttributionError::EmptyCohort);
    }
    let encoded: Vec<SparseFeatureVector> = cohort.iter().map(|r| encode(r, vocab, quarters)).collect();
    let igs = encoded
        .iter()
        .map(|x| integrated_gradients(model, x, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(&encoded, &igs, vocab, quarters, config))
}

/// Cohort reduction over precomputed per-patient attributions, in patient
/// order.
pub fn aggregate(
    encoded: &[SparseFeatureVector],
    igs: &[Vec<(usize, f64)>],
    vocab: &CodeVocabulary,
    quarters: usize,
    config: &AttributionConfig,
) -> AttributionReport {
    let n = encoded.len() as f64;
    let width = vocab.block_width();
    // column -> (ig sum, nonzero patients, occurrences)
    let mut stats: BTreeMap<usize, (f64, usize, f64)> = BTreeMap::new();
    for (x, ig) in encoded.iter().zip(igs) {
        for (i, v) in x.iter() {
            let e = stats.entry(i).or_default();
            e.1 += 1;
            e.2 += v;
        }
        for &(i, g) in ig {
            stats.entry(i).or_default().0 += g;
        }
    }
    let columns: Vec<ColumnScore> = stats
        .into_iter()
        .filter(|(_, (_, count, _))| *count > 0)
        .map(|(column, (sum, count, occ))| {
            let mean_ig = sum / n;
            let denom = match config.normalization {
                Normalization::Patients => count as f64,
                Normalization::Occurrences => occ,
            };
            ColumnScore {
                column,
                quarter: column / width,
                mean_ig,
                nonzero_count: count,
                occurrences: occ,
                normalized_ig: mean_ig / denom,
            }
        })
        .collect();

    let mut per_code: BTreeMap<usize, (f64, usize, f64)> = BTreeMap::new();
    for c in &columns {
        let e = per_code.entry(c.column % width).or_default();
        e.0 += c.mean_ig;
        e.1 += c.nonzero_count;
        e.2 += c.normalized_ig;
    }
    let mut codes: Vec<CodeScore> = per_code
        .into_iter()
        .map(|(j, (mean_ig, count, norm))| {
            let f = vocab.column_feature(j).expect("column within block");
            CodeScore {
                kind: f.kind_label().to_string(),
                code: f.code().to_string(),
                mean_ig,
                nonzero_count: count,
                normalized_ig: norm,
                rank: 0,
            }
        })
        .collect();
    codes.sort_by(|a, b| {
        b.normalized_ig
            .total_cmp(&a.normalized_ig)
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.code.cmp(&b.code))
    });
    for (r, c) in codes.iter_mut().enumerate() {
        c.rank = r + 1;
    }
    AttributionReport {
        cohort_size: encoded.len(),
        quarters,
        block_width: width,
        steps: config.steps,
        target: config.target,
        normalization: config.normalization,
        columns,
        codes,
    }
}

/// Summed normalised IG of the columns in each quarter block.
pub fn temporal_importance(report: &AttributionReport, quarters: usize) -> Vec<f64> {
    let mut series = vec![0.0; quarters];
    for c in &report.columns {
        if c.quarter < quarters {
            series[c.quarter] += c.normalized_ig;
        }
    }
    series
}

/// Which patients an attribution run explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    All,
    Increasers,
    Decreasers,
}

impl Cohort {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Cohort::All),
            "increasers" => Some(Cohort::Increasers),
            "decreasers" => Some(Cohort::Decreasers),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::All => "all",
            Cohort::Increasers => "increasers",
            Cohort::Decreasers => "decreasers",
        }
    }
}

/// Filters by the fold change from last-year to target total cost, using the
/// default 100-fold threshold and 10 Euro offset. Records without a target
/// are only kept for [`Cohort::All`].
pub fn select_cohort(records: &[ClaimsRecord], cohort: Cohort) -> Vec<ClaimsRecord> {
    let want = match cohort {
        Cohort::All => return records.to_vec(),
        Cohort::Increasers => ChangeLabel::Increasing,
        Cohort::Decreasers => ChangeLabel::Decreasing,
    };
    records
        .iter()
        .filter(|r| {
            r.target.is_some_and(|t| {
                label_change(r.last_year_cost, t.total(), DEFAULT_FOLD_THRESHOLD, DEFAULT_OFFSET) == want
            })
        })
        .cloned()
        .collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AttributionError + '_ {
    move |source| AttributionError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Columns: kind, code, mean_ig, nonzero_count, normalized_ig, rank.
pub fn write_report_csv(path: impl AsRef<Path>, codes: &[CodeScore]) -> Result<(), AttributionError> {
    let path = path.as_ref();
    let mut body = String::from("kind,code,mean_ig,nonzero_count,normalized_ig,rank\n");
    for c in codes {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.kind, c.code, c.mean_ig, c.nonzero_count, c.normalized_ig, c.rank
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(io(path))
}

/// Columns: quarter, importance, model_name; one block of rows per model.
pub fn write_temporal_csv(path: impl AsRef<Path>, series: &[(&str, &[f64])]) -> Result<(), AttributionError> {
    let path = path.as_ref();
    let mut body = String::from("quarter,importance,model_name\n");
    for (name, s) in series {
        for (q, v) in s.iter().enumerate() {
            body.push_str(&format!("{q},{v},{name}\n"));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(io(path))
}
