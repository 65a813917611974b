//! History-based predictors that forecast total cost from past spending.

use serde::{Deserialize, Serialize};

use crate::claims_data::ClaimsRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveBaseline {
    /// Total cost in the final observation year.
    LastYear,
    /// Mean yearly cost over the whole observation period.
    MeanPrior,
}

impl NaiveBaseline {
    pub const ALL: [NaiveBaseline; 2] = [NaiveBaseline::LastYear, NaiveBaseline::MeanPrior];

    pub fn as_str(self) -> &'static str {
        match self {
            NaiveBaseline::LastYear => "last_year",
            NaiveBaseline::MeanPrior => "mean_prior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }

    /// Row label used in the results table.
    pub fn label(self) -> &'static str {
        match self {
            NaiveBaseline::LastYear => "Spendings in last year",
            NaiveBaseline::MeanPrior => "Mean of previous spendings",
        }
    }

    /// `None` when the record carries no cost history.
    pub fn predict_total(self, record: &ClaimsRecord) -> Option<f64> {
        if !record.has_cost_history {
            return None;
        }
        Some(match self {
            NaiveBaseline::LastYear => record.last_year_cost,
            NaiveBaseline::MeanPrior => record.mean_prior_cost,
        })
    }

    /// Predictions for every record, or `None` if any record lacks history.
    pub fn predict_all(self, records: &[ClaimsRecord]) -> Option<Vec<f64>> {
        records.iter().map(|r| self.predict_total(r)).collect()
    }
}
