use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use claimscost::attribution::{
    cohort_attribution, select_cohort, temporal_importance, write_report_csv, write_temporal_csv, AttributionConfig,
    AttributionTarget, CodeScore, Cohort, Normalization, DEFAULT_STEPS,
};
use claimscost::baselines::NaiveBaseline;
use claimscost::claims_data::{load_dataset, DatasetSchema, DEFAULT_QUARTERS};
use claimscost::model::ModelError;

use crate::model_dir;
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortArg {
    All,
    Increasers,
    Decreasers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationArg {
    Patients,
    Occurrences,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AttributeArgs {
    /// Trained model directory.
    #[arg(long)]
    pub model: String,
    /// Records to select the cohort from (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    #[arg(long, value_enum, default_value_t = CohortArg::Increasers)]
    pub cohort: CohortArg,
    /// `total` or `category=<name>`.
    #[arg(long, default_value = "total")]
    pub target: String,
    /// Riemann steps along the integration path.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Patients)]
    pub normalization: NormalizationArg,
    /// Codes listed in the summary.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    model: &'a str,
    cohort: &'a str,
    cohort_size: usize,
    target: String,
    steps: usize,
    normalization: Normalization,
    top: &'a [CodeScore],
}

impl AttributeArgs {
    fn is_naive(&self) -> bool {
        NaiveBaseline::parse(&self.model).is_some()
    }

    pub fn model_dir(&self) -> Option<PathBuf> {
        (!self.is_naive()).then(|| PathBuf::from(&self.model))
    }

    fn config(&self) -> Result<AttributionConfig> {
        let target = AttributionTarget::parse(&self.target)
            .with_context(|| format!("--target must be total or category=<name>, got {:?}", self.target))?;
        Ok(AttributionConfig {
            steps: self.steps,
            baseline: None,
            target,
            normalization: match self.normalization {
                NormalizationArg::Patients => Normalization::Patients,
                NormalizationArg::Occurrences => Normalization::Occurrences,
            },
        })
    }

    fn cohort(&self) -> Cohort {
        match self.cohort {
            CohortArg::All => Cohort::All,
            CohortArg::Increasers => Cohort::Increasers,
            CohortArg::Decreasers => Cohort::Decreasers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_naive() {
            return Err(ModelError::AttributionUnsupported(self.model.clone()).into());
        }
        if self.steps == 0 {
            bail!("--steps must be at least 1");
        }
        self.config().map(|_| ())
    }
}

pub fn run(args: &AttributeArgs, out: &Path) -> Result<Outcome> {
    let config = args.config()?;
    let m = model_dir::load(Path::new(&args.model))?;
    let records = load_dataset(&args.data, &DatasetSchema { quarters: args.quarters })?;
    if m.card.quarters != args.quarters {
        bail!(
            "model was trained on {}-quarter records but --quarters is {}",
            m.card.quarters,
            args.quarters
        );
    }
    let cohort = m.card.prepare(&select_cohort(&records, args.cohort()))?;
    let report = cohort_attribution(&m.model, &cohort, &m.vocab, m.card.window, &config)?;

    write_report_csv(out.join("attribution.csv"), &report.codes)?;
    let series = temporal_importance(&report, m.card.window);
    write_temporal_csv(out.join("temporal.csv"), &[(m.card.label.as_str(), &series)])?;
    let summary = Summary {
        model: &m.card.label,
        cohort: args.cohort().as_str(),
        cohort_size: report.cohort_size,
        target: config.target.label(),
        steps: config.steps,
        normalization: config.normalization,
        top: report.top(args.top),
    };
    std::fs::write(
        out.join("attribution_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("{} patients in the {} cohort; top codes:", report.cohort_size, summary.cohort);
    for c in report.top(args.top.min(10)) {
        println!("{:>3}. {}/{} {:.4}", c.rank, c.kind, c.code, c.normalized_ig);
    }
    Ok(Outcome {
        artifacts: vec![
            "attribution.csv".into(),
            "temporal.csv".into(),
            "attribution_summary.json".into(),
        ],
    })
}
