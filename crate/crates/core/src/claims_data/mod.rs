//! Patient claims records, JSONL ingestion and dataset splitting.
//!
//! A record holds one patient's coded events and numeric measurements per
//! quarter of the observation window, plus (optionally) the seven-category
//! cost vector of the following year.

mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};

pub use synthetic::{
    generate_synthetic, CodeEffect, GroundTruth, PairEffect, SyntheticDataset, SyntheticSpec,
    VocabSizes,
};

/// Number of cost categories predicted per patient.
pub const NUM_CATEGORIES: usize = 7;

/// Name of the per-quarter numeric event carrying the realised total cost.
pub const COST_EVENT: &str = "cost_total";

/// Default observation length: six years of quarters.
pub const DEFAULT_QUARTERS: usize = 24;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{reason}, line {line}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate patient_id {id:?}, line {line}")]
    DuplicatePatient { id: String, line: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cannot split {0} record(s); at least 2 are required")]
    TooFewRecords(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("observation length must be at least 4 quarters, got {0}")]
    BadQuarters(usize),
    #[error("failed to write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Source vocabulary of a coded event. Variants are declared in label order
/// so the derived ordering is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "ATC")]
    Atc,
    #[serde(rename = "DRG")]
    Drg,
    #[serde(rename = "FG")]
    Fg,
    #[serde(rename = "GOP")]
    Gop,
    #[serde(rename = "ICD10")]
    Icd10,
    #[serde(rename = "OPS")]
    Ops,
    #[serde(rename = "OTHER")]
    Other,
    #[serde(rename = "SEX")]
    Sex,
}

impl EventKind {
    /// In lexicographic order of the kind labels, which is also `Ord`.
    pub const ALL: [EventKind; 8] = [
        EventKind::Atc,
        EventKind::Drg,
        EventKind::Fg,
        EventKind::Gop,
        EventKind::Icd10,
        EventKind::Ops,
        EventKind::Other,
        EventKind::Sex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Icd10 => "ICD10",
            EventKind::Atc => "ATC",
            EventKind::Drg => "DRG",
            EventKind::Ops => "OPS",
            EventKind::Fg => "FG",
            EventKind::Gop => "GOP",
            EventKind::Sex => "SEX",
            EventKind::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The seven predicted cost categories, in output-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCategory {
    Medications,
    Practice,
    Hospital,
    MedicalSundries,
    TherapeuticAppliances,
    IncapacityCompensation,
    Dentistry,
}

impl CostCategory {
    pub const ALL: [CostCategory; NUM_CATEGORIES] = [
        CostCategory::Medications,
        CostCategory::Practice,
        CostCategory::Hospital,
        CostCategory::MedicalSundries,
        CostCategory::TherapeuticAppliances,
        CostCategory::IncapacityCompensation,
        CostCategory::Dentistry,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CostCategory::Medications => "medications",
            CostCategory::Practice => "practice",
            CostCategory::Hospital => "hospital",
            CostCategory::MedicalSundries => "medical_sundries",
            CostCategory::TherapeuticAppliances => "therapeutic_appliances",
            CostCategory::IncapacityCompensation => "incapacity_compensation",
            CostCategory::Dentistry => "dentistry",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// One non-negative Euro amount per cost category.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostVector(pub [f64; NUM_CATEGORIES]);

impl CostVector {
    pub fn get(&self, category: CostCategory) -> f64 {
        self.0[category.index()]
    }

    /// Sum over all categories except incapacity compensation.
    pub fn total(&self) -> f64 {
        crate::network::predict_total(&self.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        for c in CostCategory::ALL {
            let v = self.get(c);
            if !v.is_finite() {
                return Err(format!("non-finite cost in {}", c.name()));
            }
            if v < 0.0 {
                return Err(format!("negative cost in {}", c.name()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedCosts {
    medications: f64,
    practice: f64,
    hospital: f64,
    medical_sundries: f64,
    therapeutic_appliances: f64,
    incapacity_compensation: f64,
    dentistry: f64,
}

impl Serialize for CostVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let [medications, practice, hospital, medical_sundries, therapeutic_appliances, incapacity_compensation, dentistry] =
            self.0;
        NamedCosts {
            medications,
            practice,
            hospital,
            medical_sundries,
            therapeutic_appliances,
            incapacity_compensation,
            dentistry,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CostVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = NamedCosts::deserialize(d)?;
        Ok(CostVector([
            n.medications,
            n.practice,
            n.hospital,
            n.medical_sundries,
            n.therapeutic_appliances,
            n.incapacity_compensation,
            n.dentistry,
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodedEvent {
    pub kind: EventKind,
    pub code: String,
    pub quarter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEvent {
    pub name: String,
    pub value: f64,
    pub quarter: usize,
}

/// Tokens must be usable verbatim as CSV fields.
pub(crate) fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, ',' | ';' | '"' | '\''))
}

/// One patient's observation window and, when known, next-year costs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsRecord {
    pub patient_id: String,
    pub coded_events: Vec<CodedEvent>,
    pub numeric_events: Vec<NumericEvent>,
    pub target: Option<CostVector>,
    pub alive_or_insured: bool,
    /// Sum of `cost_total` events in the final four quarters.
    pub last_year_cost: f64,
    /// Sum of `cost_total` events divided by the number of observed years.
    pub mean_prior_cost: f64,
    /// False when the record carries no `cost_total` events at all.
    pub has_cost_history: bool,
}

impl ClaimsRecord {
    /// Builds a record and derives the naive-baseline cost fields for an
    /// observation window of `quarters` quarters.
    pub fn new(
        patient_id: impl Into<String>,
        coded_events: Vec<CodedEvent>,
        numeric_events: Vec<NumericEvent>,
        target: Option<CostVector>,
        alive_or_insured: bool,
        quarters: usize,
    ) -> Self {
        let mut record = ClaimsRecord {
            patient_id: patient_id.into(),
            coded_events,
            numeric_events,
            target,
            alive_or_insured,
            last_year_cost: 0.0,
            mean_prior_cost: 0.0,
            has_cost_history: false,
        };
        record.derive_cost_history(quarters);
        record
    }

    pub(crate) fn derive_cost_history(&mut self, quarters: usize) {
        let last_year_start = quarters.saturating_sub(4);
        let mut last = 0.0;
        let mut all = 0.0;
        let mut seen = false;
        for e in self.numeric_events.iter().filter(|e| e.name == COST_EVENT) {
            seen = true;
            all += e.value;
            if e.quarter >= last_year_start {
                last += e.value;
            }
        }
        if seen {
            self.last_year_cost = last.max(0.0);
            self.mean_prior_cost = (all / (quarters as f64 / 4.0)).max(0.0);
        } else {
            self.last_year_cost = 0.0;
            self.mean_prior_cost = 0.0;
        }
        self.has_cost_history = seen;
    }

    /// Checks every per-record invariant against an observation length.
    pub fn validate(&self, quarters: usize) -> Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("empty patient_id".into());
        }
        for e in &self.coded_events {
            if !valid_token(&e.code) {
                return Err(format!("invalid code token {:?}", e.code));
            }
            if e.quarter >= quarters {
                return Err(format!(
                    "event quarter {} outside observation window of {quarters}",
                    e.quarter
                ));
            }
        }
        for e in &self.numeric_events {
            if !valid_token(&e.name) {
                return Err(format!("invalid numeric name {:?}", e.name));
            }
            if !e.value.is_finite() {
                return Err(format!("non-finite value for {}", e.name));
            }
            if e.quarter >= quarters {
                return Err(format!(
                    "numeric quarter {} outside observation window of {quarters}",
                    e.quarter
                ));
            }
        }
        if let Some(t) = &self.target {
            t.validate()?;
        }
        Ok(())
    }
}

/// Ingestion parameters; the only schema knob is the window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSchema {
    pub quarters: usize,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            quarters: DEFAULT_QUARTERS,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    kind: EventKind,
    code: String,
    quarter: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericLine {
    name: String,
    value: f64,
    quarter: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    patient_id: String,
    #[serde(default)]
    events: Vec<EventLine>,
    #[serde(default)]
    numerics: Vec<NumericLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<CostVector>,
    #[serde(default = "default_true")]
    alive_or_insured: bool,
}

/// Parses JSONL records from a reader. Blank lines are skipped.
pub fn read_dataset<R: BufRead>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<Vec<ClaimsRecord>, DataError> {
    if schema.quarters < 4 {
        return Err(DataError::BadQuarters(schema.quarters));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let record = ClaimsRecord::new(
            raw.patient_id,
            raw.events
                .into_iter()
                .map(|e| CodedEvent {
                    kind: e.kind,
                    code: e.code,
                    quarter: e.quarter,
                })
                .collect(),
            raw.numerics
                .into_iter()
                .map(|e| NumericEvent {
                    name: e.name,
                    value: e.value,
                    quarter: e.quarter,
                })
                .collect(),
            raw.target,
            raw.alive_or_insured,
            schema.quarters,
        );
        record
            .validate(schema.quarters)
            .map_err(|reason| DataError::Malformed {
                line: line_no,
                reason,
            })?;
        if !seen.insert(record.patient_id.clone()) {
            return Err(DataError::DuplicatePatient {
                id: record.patient_id,
                line: line_no,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Loads a JSONL dataset, preserving file order.
pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
) -> Result<Vec<ClaimsRecord>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file), schema)
}

/// Serialises one record as a single JSON line (no trailing newline).
pub fn record_to_json(record: &ClaimsRecord) -> String {
    let line = RecordLine {
        patient_id: record.patient_id.clone(),
        events: record
            .coded_events
            .iter()
            .map(|e| EventLine {
                kind: e.kind,
                code: e.code.clone(),
                quarter: e.quarter,
            })
            .collect(),
        numerics: record
            .numeric_events
            .iter()
            .map(|e| NumericLine {
                name: e.name.clone(),
                value: e.value,
                quarter: e.quarter,
            })
            .collect(),
        target: record.target,
        alive_or_insured: record.alive_or_insured,
    };
    serde_json::to_string(&line).expect("record serialisation is infallible")
}

pub fn write_dataset_to<W: Write>(mut writer: W, records: &[ClaimsRecord]) -> std::io::Result<()> {
    for r in records {
        writer.write_all(record_to_json(r).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[ClaimsRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let err = |source| DataError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(err)?;
    write_dataset_to(BufWriter::new(file), records).map_err(err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// The first ⌈n·fraction⌉ records train, the rest test.
    Positional,
    /// Seeded permutation, then positional.
    Shuffled { seed: u64 },
}

/// Number of training records for a positional split.
///
/// `n·fraction` is snapped to the nearest integer when it is within rounding
/// noise of one, so that fractions written as `k/n` select exactly `k`.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    let raw = n as f64 * train_fraction;
    let snapped = if (raw - raw.round()).abs() <= 1e-9 * raw.max(1.0) {
        raw.round()
    } else {
        raw.ceil()
    };
    (snapped as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Partitions records into disjoint train and test lists.
pub fn split_dataset(
    records: &[ClaimsRecord],
    train_fraction: f64,
    mode: SplitMode,
) -> Result<(Vec<ClaimsRecord>, Vec<ClaimsRecord>), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    if records.len() < 2 {
        return Err(DataError::TooFewRecords(records.len()));
    }
    let k = train_size(records.len(), train_fraction);
    let mut order: Vec<usize> = (0..records.len()).collect();
    if let SplitMode::Shuffled { seed } = mode {
        order.shuffle(&mut stream(seed, Purpose::Split));
    }
    let train = order[..k].iter().map(|&i| records[i].clone()).collect();
    let test = order[k..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, test))
}
