//! Code vocabulary and quarterly sparse encoding.
//!
//! Each quarter of the observation window gets a block of `V_total` columns:
//! the `V` retained categorical codes first (count-coded), then one column per
//! numeric feature name (raw values). Blocks are concatenated in quarter
//! order, giving `d = T · V_total` columns; quarter `q`, column `j` lives at
//! `q · V_total + j`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

use crate::claims_data::{valid_token, ClaimsRecord, CodedEvent, EventKind, NumericEvent};

/// Kind label used for numeric features in the vocabulary CSV.
pub const NUMERIC_KIND: &str = "NUMERIC";

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("keep_years must be in [1, 6] with 4·keep_years ≤ {quarters}, got {keep_years}")]
    BadTruncation { keep_years: usize, quarters: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary file: {0}")]
    Csv(#[from] csv::Error),
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabulary { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub kind: EventKind,
    pub code: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericEntry {
    pub name: String,
    pub count: u64,
}

/// Which numeric event names become feature columns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum NumericSelection {
    #[default]
    All,
    None,
    Only(Vec<String>),
}

impl NumericSelection {
    fn admits(&self, name: &str) -> bool {
        match self {
            NumericSelection::All => true,
            NumericSelection::None => false,
            NumericSelection::Only(names) => names.iter().any(|n| n == name),
        }
    }
}

/// Retained codes (sorted by kind, then code) followed by numeric features
/// (sorted by name).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeVocabulary {
    pub min_count: u64,
    entries: Vec<VocabEntry>,
    numeric: Vec<NumericEntry>,
    index: HashMap<EventKind, HashMap<String, usize>>,
    numeric_index: HashMap<String, usize>,
}

/// Description of one column inside a quarter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnFeature<'a> {
    Code { kind: EventKind, code: &'a str },
    Numeric { name: &'a str },
}

impl<'a> ColumnFeature<'a> {
    pub fn kind_label(&self) -> &'a str {
        match self {
            ColumnFeature::Code { kind, .. } => kind.as_str(),
            ColumnFeature::Numeric { .. } => NUMERIC_KIND,
        }
    }

    pub fn code(&self) -> &'a str {
        match self {
            ColumnFeature::Code { code, .. } => code,
            ColumnFeature::Numeric { name } => name,
        }
    }
}

impl CodeVocabulary {
    fn from_parts(min_count: u64, entries: Vec<VocabEntry>, numeric: Vec<NumericEntry>) -> Self {
        let mut index: HashMap<EventKind, HashMap<String, usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry(e.kind).or_default().insert(e.code.clone(), i);
        }
        let numeric_index = numeric
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.clone(), entries.len() + i))
            .collect();
        CodeVocabulary {
            min_count,
            entries,
            numeric,
            index,
            numeric_index,
        }
    }

    /// Number of retained categorical codes (`V`).
    pub fn num_codes(&self) -> usize {
        self.entries.len()
    }

    pub fn num_numeric(&self) -> usize {
        self.numeric.len()
    }

    /// Columns per quarter block (`V_total`).
    pub fn block_width(&self) -> usize {
        self.entries.len() + self.numeric.len()
    }

    /// Full input dimension for an observation window of `quarters`.
    pub fn dimension(&self, quarters: usize) -> usize {
        quarters * self.block_width()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn numeric_entries(&self) -> &[NumericEntry] {
        &self.numeric
    }

    pub fn code_column(&self, kind: EventKind, code: &str) -> Option<usize> {
        self.index.get(&kind)?.get(code).copied()
    }

    pub fn numeric_column(&self, name: &str) -> Option<usize> {
        self.numeric_index.get(name).copied()
    }

    /// The feature occupying column `j` of a quarter block.
    pub fn column_feature(&self, j: usize) -> Option<ColumnFeature<'_>> {
        if let Some(e) = self.entries.get(j) {
            Some(ColumnFeature::Code {
                kind: e.kind,
                code: &e.code,
            })
        } else {
            self.numeric
                .get(j - self.entries.len())
                .map(|n| ColumnFeature::Numeric { name: &n.name })
        }
    }

    pub fn column_count(&self, j: usize) -> Option<u64> {
        if let Some(e) = self.entries.get(j) {
            Some(e.count)
        } else {
            self.numeric.get(j - self.entries.len()).map(|n| n.count)
        }
    }

    /// Writes `kind,code,column_index,count`; numeric features use the kind
    /// label `NUMERIC`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(
            File::create(path).map_err(csv::Error::from)?,
        ));
        w.write_record(["kind", "code", "column_index", "count"])?;
        for (j, e) in self.entries.iter().enumerate() {
            w.write_record([
                e.kind.as_str(),
                &e.code,
                &j.to_string(),
                &e.count.to_string(),
            ])?;
        }
        for (i, n) in self.numeric.iter().enumerate() {
            w.write_record([
                NUMERIC_KIND,
                &n.name,
                &(self.entries.len() + i).to_string(),
                &n.count.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a vocabulary CSV; `min_count` is not stored in the file.
    pub fn read_csv(path: impl AsRef<Path>, min_count: u64) -> Result<Self, EncodeError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        let mut numeric = Vec::new();
        for (i, row) in r.records().enumerate() {
            let line = i + 2;
            let row = row?;
            let bad = |reason: String| EncodeError::BadVocabulary { line, reason };
            if row.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", row.len())));
            }
            let column: usize = row[2]
                .parse()
                .map_err(|_| bad(format!("bad column_index {:?}", &row[2])))?;
            let count: u64 = row[3]
                .parse()
                .map_err(|_| bad(format!("bad count {:?}", &row[3])))?;
            if column != entries.len() + numeric.len() {
                return Err(bad(format!("column_index {column} out of sequence")));
            }
            if !valid_token(&row[1]) {
                return Err(bad(format!("invalid code {:?}", &row[1])));
            }
            if &row[0] == NUMERIC_KIND {
                numeric.push(NumericEntry {
                    name: row[1].to_string(),
                    count,
                });
            } else {
                if !numeric.is_empty() {
                    return Err(bad("code listed after numeric features".into()));
                }
                let kind = EventKind::parse(&row[0])
                    .ok_or_else(|| bad(format!("unknown kind {:?}", &row[0])))?;
                entries.push(VocabEntry {
                    kind,
                    code: row[1].to_string(),
                    count,
                });
            }
        }
        Ok(Self::from_parts(min_count, entries, numeric))
    }
}

/// Options for [`build_vocabulary_with`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VocabularyConfig {
    pub min_count: u64,
    pub numeric: NumericSelection,
}

/// Keeps every code observed strictly more than `min_count` times across all
/// records and quarters, plus every numeric feature name.
pub fn build_vocabulary(
    records: &[ClaimsRecord],
    min_count: u64,
) -> Result<CodeVocabulary, EncodeError> {
    build_vocabulary_with(
        records,
        &VocabularyConfig {
            min_count,
            numeric: NumericSelection::All,
        },
    )
}

pub fn build_vocabulary_with(
    records: &[ClaimsRecord],
    config: &VocabularyConfig,
) -> Result<CodeVocabulary, EncodeError> {
    if records.is_empty() {
        return Err(EncodeError::EmptyCorpus);
    }
    let mut codes: BTreeMap<(EventKind, &str), u64> = BTreeMap::new();
    let mut numerics: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        for e in &r.coded_events {
            *codes.entry((e.kind, e.code.as_str())).or_default() += 1;
        }
        for e in &r.numeric_events {
            if config.numeric.admits(&e.name) {
                *numerics.entry(e.name.as_str()).or_default() += 1;
            }
        }
    }
    let entries = codes
        .into_iter()
        .filter(|(_, n)| *n > config.min_count)
        .map(|((kind, code), count)| VocabEntry {
            kind,
            code: code.to_string(),
            count,
        })
        .collect();
    let numeric = numerics
        .into_iter()
        .map(|(name, count)| NumericEntry {
            name: name.to_string(),
            count,
        })
        .collect();
    Ok(CodeVocabulary::from_parts(config.min_count, entries, numeric))
}

/// Index/value pairs over a fixed dimension; indices strictly increasing and
/// no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatureVector {
    dimension: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFeatureVector {
    pub fn empty(dimension: usize) -> Self {
        SparseFeatureVector {
            dimension,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from unordered pairs, summing duplicates and dropping
    /// zeros. Panics on an index outside the dimension or a non-finite value.
    pub fn from_pairs(dimension: usize, mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            assert!(i < dimension, "index {i} outside dimension {dimension}");
            assert!(v.is_finite(), "non-finite feature value at {i}");
            if indices.last() == Some(&i) {
                *values.last_mut().expect("parallel lists") += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = SparseFeatureVector::empty(dimension);
        for (i, v) in indices.into_iter().zip(values) {
            if v != 0.0 {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let pairs = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        Self::from_pairs(dense.len(), pairs)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        self.indices
            .binary_search(&index)
            .map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dimension];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    /// Same support, values multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return SparseFeatureVector::empty(self.dimension);
        }
        SparseFeatureVector {
            dimension: self.dimension,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }
}

/// Encodes one record. Codes and numeric names outside the vocabulary, and
/// events at quarters ≥ `quarters`, are dropped. Repeated numeric events for
/// the same name and quarter are summed.
pub fn encode(record: &ClaimsRecord, vocab: &CodeVocabulary, quarters: usize) -> SparseFeatureVector {
    let width = vocab.block_width();
    let dim = quarters * width;
    let mut pairs = Vec::with_capacity(record.coded_events.len() + record.numeric_events.len());
    for e in &record.coded_events {
        if e.quarter >= quarters {
            continue;
        }
        if let Some(j) = vocab.code_column(e.kind, &e.code) {
            pairs.push((e.quarter * width + j, 1.0));
        }
    }
    for e in &record.numeric_events {
        if e.quarter >= quarters {
            continue;
        }
        if let Some(j) = vocab.numeric_column(&e.name) {
            pairs.push((e.quarter * width + j, e.value));
        }
    }
    SparseFeatureVector::from_pairs(dim, pairs)
}

/// Keeps the final `keep_years` years of a `quarters`-long window and
/// re-indexes them from 0. The target and eligibility flag are unchanged;
/// the naive-baseline fields are re-derived over the shorter window.
pub fn truncate_observation(
    record: &ClaimsRecord,
    keep_years: usize,
    quarters: usize,
) -> Result<ClaimsRecord, EncodeError> {
    let keep = 4 * keep_years;
    if !(1..=6).contains(&keep_years) || keep > quarters {
        return Err(EncodeError::BadTruncation {
            keep_years,
            quarters,
        });
    }
    let start = quarters - keep;
    let coded_events = record
        .coded_events
        .iter()
        .filter(|e| e.quarter >= start)
        .map(|e| CodedEvent {
            quarter: e.quarter - start,
            ..e.clone()
        })
        .collect();
    let numeric_events = record
        .numeric_events
        .iter()
        .filter(|e| e.quarter >= start)
        .map(|e| NumericEvent {
            quarter: e.quarter - start,
            ..e.clone()
        })
        .collect();
    Ok(ClaimsRecord::new(
        record.patient_id.clone(),
        coded_events,
        numeric_events,
        record.target,
        record.alive_or_insured,
        keep,
    ))
}
