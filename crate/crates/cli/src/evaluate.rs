use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use claimscost::baselines::NaiveBaseline;
use claimscost::claims_data::{load_dataset, ClaimsRecord, DatasetSchema, DEFAULT_QUARTERS};
use claimscost::evaluation::{
    change_analysis, default_cost_edges, evaluate_totals, filter_eligible, paired_error_difference, write_pr_csv,
    write_roc_csv, ChangeDirection, EvaluationReport, DEFAULT_FOLD_THRESHOLD, DEFAULT_OFFSET,
};
use claimscost::model::CostModel;
use claimscost::vocab_encoder::{encode, CodeVocabulary};

use crate::model_dir::{self, LoadedModel};
use crate::Outcome;

pub const TABLE_FILE: &str = "table1.csv";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Test records (JSONL).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained model directory, optionally prefixed with a row label as
    /// `LABEL=DIR`. Repeatable.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    /// Fold change separating increasing and decreasing patients.
    #[arg(long, default_value_t = DEFAULT_FOLD_THRESHOLD)]
    pub threshold: f64,
    /// Euro offset added to both costs in the fold change.
    #[arg(long, default_value_t = DEFAULT_OFFSET)]
    pub offset: f64,
    /// Add a row predicting the true targets.
    #[arg(long)]
    pub oracle: bool,
}

/// A `--model` value split into optional label and directory.
pub fn parse_model_spec(s: &str) -> (Option<String>, PathBuf) {
    match s.split_once('=') {
        Some((label, dir)) if !label.is_empty() => (Some(label.to_string()), PathBuf::from(dir)),
        _ => (None, PathBuf::from(s)),
    }
}

impl EvaluateArgs {
    pub fn model_dirs(&self) -> Vec<PathBuf> {
        self.models.iter().map(|m| parse_model_spec(m).1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 1.0) {
            bail!("--threshold must exceed 1, got {}", self.threshold);
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            bail!("--offset must be non-negative, got {}", self.offset);
        }
        if self.quarters < 4 {
            bail!("--quarters must be at least 4, got {}", self.quarters);
        }
        Ok(())
    }
}

/// Predicted totals for records already prepared for the model's window.
pub fn predict_totals(
    model: &dyn CostModel,
    vocab: &CodeVocabulary,
    window: usize,
    records: &[ClaimsRecord],
) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| model.predict_total(&encode(r, vocab, window)).map_err(Into::into))
        .collect()
}

pub fn loaded_totals(m: &LoadedModel, records: &[ClaimsRecord]) -> Result<Vec<f64>> {
    let prepared = m.card.prepare(records)?;
    predict_totals(&m.model, &m.vocab, m.card.window, &prepared)
}

pub fn true_totals(records: &[ClaimsRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            r.target
                .map(|t| t.total())
                .with_context(|| format!("test record {} has no target", r.patient_id))
        })
        .collect()
}

struct Row {
    label: String,
    /// `network`, `ridge`, or empty for baselines.
    base: String,
    totals: Vec<f64>,
    change: bool,
}

/// Lowercase alphanumerics joined by `_`, unique within `taken`.
pub fn slug(label: &str, taken: &mut Vec<String>) -> String {
    let mut s = String::new();
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() {
            s.push(ch.to_ascii_lowercase());
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    let base = s.trim_matches('_').to_string();
    let mut s = if base.is_empty() { "model".to_string() } else { base.clone() };
    let mut i = 2;
    while taken.contains(&s) {
        s = format!("{base}_{i}");
        i += 1;
    }
    taken.push(s.clone());
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

pub fn run(args: &EvaluateArgs, out: &Path) -> Result<Outcome> {
    let records = load_dataset(&args.test, &DatasetSchema { quarters: args.quarters })?;
    let records = filter_eligible(records)?;
    let y = true_totals(&records)?;
    let last_year: Vec<f64> = records.iter().map(|r| r.last_year_cost).collect();

    let mut rows = Vec::new();
    for b in NaiveBaseline::ALL {
        match b.predict_all(&records) {
            Some(totals) => rows.push(Row {
                label: b.label().to_string(),
                base: String::new(),
                totals,
                // Last-year prediction has fold change 1 for every patient.
                change: b != NaiveBaseline::LastYear,
            }),
            None => eprintln!("warning: skipping {}: some records carry no cost history", b.as_str()),
        }
    }
    for spec in &args.models {
        let (label, dir) = parse_model_spec(spec);
        let m = model_dir::load(&dir)?;
        if m.card.quarters != args.quarters {
            bail!(
                "{} was trained on {}-quarter records but --quarters is {}",
                dir.display(),
                m.card.quarters,
                args.quarters
            );
        }
        rows.push(Row {
            label: label.unwrap_or_else(|| m.card.label.clone()),
            base: m.card.base.clone(),
            totals: loaded_totals(&m, &records)?,
            change: true,
        });
    }
    if args.oracle {
        rows.push(Row {
            label: "Oracle".into(),
            base: String::new(),
            totals: y.clone(),
            change: true,
        });
    }

    let edges = default_cost_edges();
    let mut artifacts = vec![
        TABLE_FILE.to_string(),
        "error_by_cost.csv".to_string(),
        "change_auc.csv".to_string(),
    ];
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["model", "pearson_r", "spearman_rho", "mape", "r_squared", "cpm"])?;
    let mut bins = csv::Writer::from_writer(Vec::new());
    bins.write_record(["model", "lower", "upper", "count", "mean_abs_error"])?;
    let mut auc = csv::Writer::from_writer(Vec::new());
    auc.write_record(["model", "direction", "positives", "auprc", "auroc"])?;
    let mut taken = Vec::new();
    for row in &rows {
        let mut report: EvaluationReport = evaluate_totals(&row.label, &y, &row.totals, None, &edges)?;
        if row.change {
            report.change_analysis = Some(change_analysis(&y, &row.totals, &last_year, args.threshold, args.offset)?);
        }
        let m = &report.metrics;
        table.write_record([
            row.label.clone(),
            opt(m.pearson_r),
            opt(m.spearman_rho),
            m.mape.to_string(),
            m.r_squared.to_string(),
            m.cpm.to_string(),
        ])?;
        for b in &report.error_by_cost_bin {
            bins.write_record([
                row.label.clone(),
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                opt(b.mean_abs_error),
            ])?;
        }
        let s = slug(&row.label, &mut taken);
        if let Some(ch) = &report.change_analysis {
            for (d, name) in [(ChangeDirection::Increase, "increase"), (ChangeDirection::Decrease, "decrease")] {
                let Some(c) = ch.direction(d) else {
                    auc.write_record([row.label.as_str(), name, "0", "na", "na"])?;
                    continue;
                };
                auc.write_record([
                    row.label.clone(),
                    name.to_string(),
                    c.positives.to_string(),
                    c.auprc.to_string(),
                    c.auroc.to_string(),
                ])?;
                let pr = format!("pr_{s}_{name}.csv");
                let roc = format!("roc_{s}_{name}.csv");
                write_pr_csv(out.join(&pr), &c.pr_curve)?;
                write_roc_csv(out.join(&roc), &c.roc_curve)?;
                artifacts.extend([pr, roc]);
            }
        }
        let name = format!("report_{s}.json");
        std::fs::write(out.join(&name), serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {name}"))?;
        artifacts.push(name);
        println!(
            "{:<36} r²={:.4} cpm={:.4} mape={:.2}",
            row.label, m.r_squared, m.cpm, m.mape
        );
    }
    for (name, w) in [(TABLE_FILE, table), ("error_by_cost.csv", bins), ("change_auc.csv", auc)] {
        std::fs::write(out.join(name), w.into_inner()?).with_context(|| format!("writing {name}"))?;
    }

    let first = |base: &str| rows.iter().find(|r| r.base == base);
    if let (Some(a), Some(b)) = (first("network"), first("ridge")) {
        let diff = paired_error_difference(&y, &a.totals, &b.totals, &edges)?;
        let mut text = String::from("lower,upper,count,mean_difference\n");
        for d in diff {
            writeln!(text, "{},{},{},{}", d.lower, d.upper, d.count, opt(d.mean_difference))?;
        }
        std::fs::write(out.join("error_difference.csv"), text)?;
        artifacts.push("error_difference.csv".into());
    }
    Ok(Outcome { artifacts })
}
