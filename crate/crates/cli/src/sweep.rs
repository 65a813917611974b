//! Training-size × observation-length grid for the network and ridge.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use claimscost::claims_data::{load_dataset, ClaimsRecord, DatasetSchema, DEFAULT_QUARTERS};
use claimscost::evaluation::{filter_eligible, MetricSet};
use claimscost::network::{DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use claimscost::trainer::{DEFAULT_EPOCHS, DEFAULT_LAMBDA};

use crate::evaluate::{predict_totals, true_totals};
use crate::model_dir::prepare_records;
use crate::train::{BaseKind, ModeArg, ModelKind, TrainArgs};
use crate::{Outcome, WORKERS_ENV};

pub const METRICS: [&str; 5] = ["r_squared", "pearson_r", "spearman_rho", "mape", "cpm"];
const MODELS: [ModelKind; 2] = [ModelKind::Network, ModelKind::Ridge];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Training pool; each cell uses its first `n` records.
    #[arg(long)]
    pub train: PathBuf,
    /// Test set shared by every cell.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training-set sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
    pub counts: Vec<usize>,
    /// Observation lengths in years, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    pub years: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_QUARTERS)]
    pub quarters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    pub dropout: f64,
}

impl SweepArgs {
    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.years.is_empty() {
            bail!("--counts and --years must each list at least one value");
        }
        if self.counts.contains(&0) {
            bail!("--counts must be positive");
        }
        for m in MODELS {
            self.train_args(m, None).validate()?;
        }
        Ok(())
    }

    /// The `train` invocation equivalent to one model of one cell.
    pub fn train_args(&self, model: ModelKind, years: Option<usize>) -> TrainArgs {
        TrainArgs {
            model,
            data: self.train.clone(),
            out: self.out.clone(),
            quarters: self.quarters,
            years,
            min_count: self.min_count,
            numeric: "all".into(),
            epochs: self.epochs,
            batch: None,
            lr: self.lr,
            lambda: self.lambda,
            hidden: self.hidden,
            dropout: self.dropout,
            seed: self.seed,
            k: 1,
            base: BaseKind::Network,
            mode: ModeArg::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub patients: usize,
    pub years: usize,
    pub model: String,
    /// `None` when the cell could not be run.
    pub metrics: Option<MetricSet>,
    pub note: String,
}

impl Cell {
    pub fn metric(&self, name: &str) -> Option<f64> {
        let m = self.metrics.as_ref()?;
        match name {
            "r_squared" => Some(m.r_squared),
            "pearson_r" => m.pearson_r,
            "spearman_rho" => m.spearman_rho,
            "mape" => Some(m.mape),
            "cpm" => Some(m.cpm),
            _ => None,
        }
    }
}

fn run_cell(
    args: &SweepArgs,
    pool: &[ClaimsRecord],
    test: &[ClaimsRecord],
    y: &[f64],
    n: usize,
    years: usize,
    model: ModelKind,
) -> Result<MetricSet> {
    if n > pool.len() {
        bail!("needs {n} training records, pool has {}", pool.len());
    }
    let spec = args.train_args(model, Some(years)).fit_spec()?;
    let fitted = spec.fit(&pool[..n])?;
    let prepared = prepare_records(test, spec.quarters, spec.window)?;
    let yhat = predict_totals(&fitted.model, &fitted.vocab, spec.window, &prepared)?;
    Ok(MetricSet::compute(y, &yhat)?)
}

fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse()
            .with_context(|| format!("{WORKERS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

pub fn run(args: &SweepArgs, out: &Path) -> Result<Outcome> {
    let schema = DatasetSchema { quarters: args.quarters };
    let pool = load_dataset(&args.train, &schema)?;
    let test = filter_eligible(load_dataset(&args.test, &schema)?)?;
    let y = true_totals(&test)?;

    let jobs: Vec<(usize, usize, ModelKind)> = args
        .counts
        .iter()
        .flat_map(|&n| args.years.iter().flat_map(move |&yr| MODELS.map(|m| (n, yr, m))))
        .collect();
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .context("starting sweep workers")?;
    let cells: Vec<Cell> = threads.install(|| {
        jobs.par_iter()
            .map(|&(n, years, model)| {
                let name = if model == ModelKind::Ridge { "ridge" } else { "network" };
                let (metrics, note) = match run_cell(args, &pool, &test, &y, n, years, model) {
                    Ok(m) => (Some(m), String::new()),
                    Err(e) => (None, format!("{e:#}")),
                };
                Cell {
                    patients: n,
                    years,
                    model: name.to_string(),
                    metrics,
                    note,
                }
            })
            .collect()
    });
    for c in cells.iter().filter(|c| c.metrics.is_none()) {
        eprintln!("warning: cell n={} years={} {} skipped: {}", c.patients, c.years, c.model, c.note);
    }

    let mut artifacts = vec!["cells.csv".to_string()];
    std::fs::write(out.join("cells.csv"), cells_csv(&cells)?)?;
    for metric in METRICS {
        for variant in ["network", "ridge", "difference"] {
            let name = format!("grid_{metric}_{variant}.csv");
            std::fs::write(out.join(&name), grid_csv(args, &cells, metric, variant))?;
            artifacts.push(name);
        }
    }
    for c in cells.iter().filter(|c| c.model == "network") {
        println!(
            "n={:<6} years={} network r²={}",
            c.patients,
            c.years,
            fmt(c.metric("r_squared"))
        );
    }
    Ok(Outcome { artifacts })
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

fn cells_csv(cells: &[Cell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["patients", "years", "model"];
    header.extend(METRICS);
    header.push("note");
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![c.patients.to_string(), c.years.to_string(), c.model.clone()];
        row.extend(METRICS.iter().map(|m| fmt(c.metric(m))));
        row.push(c.note.clone());
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

/// Rows are patient counts, columns observation years. The difference grid
/// is network minus ridge.
fn grid_csv(args: &SweepArgs, cells: &[Cell], metric: &str, variant: &str) -> String {
    let lookup = |n: usize, yr: usize, model: &str| {
        cells
            .iter()
            .find(|c| c.patients == n && c.years == yr && c.model == model)
            .and_then(|c| c.metric(metric))
    };
    let mut s = String::from("patients");
    for yr in &args.years {
        write!(s, ",years_{yr}").unwrap();
    }
    s.push('\n');
    for &n in &args.counts {
        write!(s, "{n}").unwrap();
        for &yr in &args.years {
            let v = match variant {
                "difference" => lookup(n, yr, "network").zip(lookup(n, yr, "ridge")).map(|(a, b)| a - b),
                m => lookup(n, yr, m),
            };
            write!(s, ",{}", fmt(v)).unwrap();
        }
        s.push('\n');
    }
    s
}
