//! Synthetic claims populations with a known cost-generating process.
//!
//! The expected next-year cost of a patient is
//!
//! ```text
//! f = intercept
//!   + age_effect · age(T-1)
//!   + male_effect · [SEX=M in quarter T-1]
//!   + Σ_events recency[q] · additive(code) · kind_share(kind)
//!   + interaction_strength · Σ_pairs multiplicative(a,b) · [a observed] · [b observed] · interaction_share
//! ```
//!
//! where every term is a seven-category vector. With
//! `interaction_strength = 0` the function is linear in the count-encoded
//! features. The realised target is `f · exp(σz − σ²/2)` with one standard
//! normal `z` per patient and `σ = noise_scale`, a mean-preserving log-normal
//! perturbation of the whole cost vector.
//!
//! Quarterly `cost_total` events are the sum of the additive effects of that
//! quarter's events, perturbed by independent log-normal noise, so naive
//! history-based predictors are informative but imperfect.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    ClaimsRecord, CodedEvent, CostVector, DataError, EventKind, NumericEvent, COST_EVENT,
    NUM_CATEGORIES,
};
use crate::rng::{stream, Purpose};

/// Name of the per-quarter numeric age event.
pub const AGE_EVENT: &str = "age";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub icd10: usize,
    pub atc: usize,
    pub drg: usize,
    pub ops: usize,
    pub fg: usize,
    pub gop: usize,
}

impl Default for VocabSizes {
    fn default() -> Self {
        VocabSizes {
            icd10: 60,
            atc: 50,
            drg: 15,
            ops: 25,
            fg: 15,
            gop: 35,
        }
    }
}

impl VocabSizes {
    fn per_kind(&self) -> [(EventKind, usize); 6] {
        [
            (EventKind::Icd10, self.icd10),
            (EventKind::Atc, self.atc),
            (EventKind::Drg, self.drg),
            (EventKind::Ops, self.ops),
            (EventKind::Fg, self.fg),
            (EventKind::Gop, self.gop),
        ]
    }

    pub fn total(&self) -> usize {
        self.per_kind().iter().map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub vocab_sizes: VocabSizes,
    pub quarters: usize,
    pub seed: u64,
    pub interaction_strength: f64,
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 2000,
            vocab_sizes: VocabSizes::default(),
            quarters: super::DEFAULT_QUARTERS,
            seed: 0,
            interaction_strength: 1.0,
            noise_scale: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        for (kind, n) in self.vocab_sizes.per_kind() {
            if n == 0 {
                return bad(format!("vocabulary size for {kind} must be positive"));
            }
        }
        if self.quarters < 4 {
            return bad(format!("quarters must be at least 4, got {}", self.quarters));
        }
        if !(self.interaction_strength.is_finite() && self.interaction_strength >= 0.0) {
            return bad("interaction_strength must be finite and non-negative".into());
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEffect {
    pub kind: EventKind,
    pub code: String,
    pub additive_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEffect {
    pub code_a: String,
    pub code_b: String,
    pub multiplicative_effect: f64,
}

/// Everything needed to re-evaluate the expected cost of any record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub quarters: usize,
    pub intercept: CostVector,
    /// Per year of the `age` value recorded in the final quarter.
    pub age_effect: CostVector,
    /// Applied per `SEX`/`M` event in the final quarter.
    pub male_effect: CostVector,
    /// Per-quarter multiplier of additive effects; sums to 4 and rises
    /// linearly so the final quarter weighs three times the first.
    pub recency_weights: Vec<f64>,
    pub kind_shares: Vec<(EventKind, CostVector)>,
    pub interaction_shares: CostVector,
    pub additive: Vec<CodeEffect>,
    /// Sorted by descending effect; the first pair is the strongest.
    pub interactions: Vec<PairEffect>,
    pub interaction_strength: f64,
    pub noise_scale: f64,
    /// True when the interaction terms vanish.
    pub linear: bool,
}

pub struct SyntheticDataset {
    pub records: Vec<ClaimsRecord>,
    pub truth: GroundTruth,
}

const MALE: &str = "M";
const FEMALE: &str = "F";

fn prefix(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Icd10 => "I",
        EventKind::Atc => "A",
        EventKind::Drg => "D",
        EventKind::Ops => "O",
        EventKind::Fg => "F",
        EventKind::Gop => "G",
        EventKind::Sex => "S",
        EventKind::Other => "X",
    }
}

fn code_name(kind: EventKind, i: usize) -> String {
    format!("{}{:03}", prefix(kind), i)
}

fn shares(pairs: &[(usize, f64)]) -> CostVector {
    let mut v = [0.0; NUM_CATEGORIES];
    for &(c, s) in pairs {
        v[c] = s;
    }
    CostVector(v)
}

// Category indices, in output order.
const MED: usize = 0;
const PRA: usize = 1;
const HOS: usize = 2;
const SUN: usize = 3;
const APP: usize = 4;
const DEN: usize = 6;

fn kind_share_table() -> Vec<(EventKind, CostVector)> {
    vec![
        (
            EventKind::Icd10,
            shares(&[(PRA, 0.5), (HOS, 0.2), (MED, 0.2), (SUN, 0.1)]),
        ),
        (EventKind::Atc, shares(&[(MED, 0.9), (SUN, 0.1)])),
        (EventKind::Drg, shares(&[(HOS, 1.0)])),
        (EventKind::Ops, shares(&[(HOS, 0.6), (PRA, 0.3), (APP, 0.1)])),
        (EventKind::Fg, shares(&[(PRA, 1.0)])),
        (EventKind::Gop, shares(&[(PRA, 0.7), (APP, 0.15), (DEN, 0.15)])),
        (EventKind::Other, shares(&[(PRA, 1.0)])),
    ]
}

fn kind_scale(kind: EventKind) -> f64 {
    match kind {
        EventKind::Icd10 => 1.0,
        EventKind::Atc => 1.5,
        EventKind::Drg => 15.0,
        EventKind::Ops => 3.0,
        EventKind::Fg => 0.4,
        EventKind::Gop => 0.5,
        EventKind::Sex | EventKind::Other => 0.0,
    }
}

pub fn recency_weights(quarters: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..quarters)
        .map(|q| 1.0 + 2.0 * q as f64 / (quarters - 1) as f64)
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|r| 4.0 * r / sum).collect()
}

impl GroundTruth {
    fn share(&self, kind: EventKind) -> Option<&CostVector> {
        self.kind_shares
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, s)| s)
    }

    /// Noise-free expected cost of a record over this truth's window.
    pub fn expected_cost(&self, record: &ClaimsRecord) -> CostVector {
        let last = self.quarters - 1;
        let mut out = self.intercept.0;
        let age = record
            .numeric_events
            .iter()
            .filter(|e| e.name == AGE_EVENT && e.quarter == last)
            .map(|e| e.value)
            .sum::<f64>();
        let males = record
            .coded_events
            .iter()
            .filter(|e| e.kind == EventKind::Sex && e.code == MALE && e.quarter == last)
            .count() as f64;
        for c in 0..NUM_CATEGORIES {
            out[c] += self.age_effect.0[c] * age + self.male_effect.0[c] * males;
        }
        for e in &record.coded_events {
            let Some(share) = self.share(e.kind) else {
                continue;
            };
            let Some(effect) = self
                .additive
                .iter()
                .find(|a| a.kind == e.kind && a.code == e.code)
            else {
                continue;
            };
            let w = self.recency_weights[e.quarter] * effect.additive_effect;
            for c in 0..NUM_CATEGORIES {
                out[c] += w * share.0[c];
            }
        }
        if self.interaction_strength > 0.0 {
            let present: HashSet<&str> =
                record.coded_events.iter().map(|e| e.code.as_str()).collect();
            for p in &self.interactions {
                if present.contains(p.code_a.as_str()) && present.contains(p.code_b.as_str()) {
                    let w = self.interaction_strength * p.multiplicative_effect;
                    for c in 0..NUM_CATEGORIES {
                        out[c] += w * self.interaction_shares.0[c];
                    }
                }
            }
        }
        CostVector(out)
    }

    pub fn strongest_pair(&self) -> Option<&PairEffect> {
        self.interactions.first()
    }

    /// Writes the additive effect table (`kind,code,additive_effect`).
    pub fn write_effect_table(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["kind", "code", "additive_effect"])?;
        for e in &self.additive {
            w.write_record([
                e.kind.as_str().to_string(),
                e.code.clone(),
                e.additive_effect.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the pair table (`code_a,code_b,multiplicative_effect`). The
    /// effects are already multiplied by the interaction strength, so a linear
    /// ground truth yields a header-only file.
    pub fn write_pair_table(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["code_a", "code_b", "multiplicative_effect"])?;
        if !self.linear {
            for p in &self.interactions {
                w.write_record([
                    p.code_a.clone(),
                    p.code_b.clone(),
                    (p.multiplicative_effect * self.interaction_strength).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Zipf-like popularity weights: lower code indices are more common.
fn popularity(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(0.7)).collect()
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

struct Catalog {
    kinds: Vec<(EventKind, Vec<String>, Vec<f64>)>,
}

impl Catalog {
    fn codes(&self, kind: EventKind) -> (&[String], &[f64]) {
        let (_, codes, pop) = self
            .kinds
            .iter()
            .find(|(k, _, _)| *k == kind)
            .expect("catalog covers every generated kind");
        (codes, pop)
    }

    fn draw<R: Rng>(&self, rng: &mut R, kind: EventKind) -> String {
        let (codes, pop) = self.codes(kind);
        codes[pick_weighted(rng, pop)].clone()
    }
}

/// Per-quarter probability that a planted code recurs after onset.
const PAIR_PERSISTENCE: f64 = 0.6;

struct PlantedPair {
    a: (EventKind, String),
    b: (EventKind, String),
    carrier_p: f64,
    single_p: f64,
}

const CHRONIC_KINDS: [(EventKind, f64); 3] = [
    (EventKind::Icd10, 0.45),
    (EventKind::Atc, 0.45),
    (EventKind::Gop, 0.10),
];

const ACUTE_KINDS: [(EventKind, f64); 5] = [
    (EventKind::Icd10, 0.30),
    (EventKind::Ops, 0.20),
    (EventKind::Drg, 0.08),
    (EventKind::Fg, 0.20),
    (EventKind::Gop, 0.22),
];

fn draw_kind<R: Rng>(rng: &mut R, table: &[(EventKind, f64)]) -> EventKind {
    let w: Vec<f64> = table.iter().map(|(_, p)| *p).collect();
    table[pick_weighted(rng, &w)].0
}

fn lognormal_factor<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// Generates a synthetic population; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let t = spec.quarters;
    let mut rng = stream(spec.seed, Purpose::Synthetic);

    // Code catalogue and additive effects.
    let base = LogNormal::new(25f64.ln(), 0.8).expect("valid log-normal");
    let mut catalog = Catalog { kinds: Vec::new() };
    let mut additive = Vec::new();
    for (kind, n) in spec.vocab_sizes.per_kind() {
        let codes: Vec<String> = (0..n).map(|i| code_name(kind, i)).collect();
        for code in &codes {
            additive.push(CodeEffect {
                kind,
                code: code.clone(),
                additive_effect: kind_scale(kind) * base.sample(&mut rng),
            });
        }
        catalog.kinds.push((kind, codes, popularity(n)));
    }

    // Planted interaction pairs. The strongest pairs a mid-popularity
    // diagnosis with a mid-popularity drug whose own additive effects are
    // small, so the pair matters almost only through the interaction.
    let mut pairs: Vec<PlantedPair> = Vec::new();
    let mut effects: Vec<f64> = Vec::new();
    let strong_a = (EventKind::Icd10, code_name(EventKind::Icd10, spec.vocab_sizes.icd10 / 2));
    let strong_b = (EventKind::Atc, code_name(EventKind::Atc, spec.vocab_sizes.atc / 2));
    for e in additive.iter_mut() {
        if (e.kind, &e.code) == (strong_a.0, &strong_a.1) || (e.kind, &e.code) == (strong_b.0, &strong_b.1) {
            e.additive_effect = 5.0;
        }
    }
    pairs.push(PlantedPair {
        a: strong_a,
        b: strong_b,
        carrier_p: 0.08,
        single_p: 0.2,
    });
    effects.push(4000.0);
    let mut used: HashSet<String> = pairs
        .iter()
        .flat_map(|p| [p.a.1.clone(), p.b.1.clone()])
        .collect();
    let pool: Vec<(EventKind, String)> = [EventKind::Icd10, EventKind::Atc, EventKind::Ops]
        .into_iter()
        .flat_map(|k| {
            let (codes, _) = catalog.codes(k);
            codes.iter().map(move |c| (k, c.clone())).collect::<Vec<_>>()
        })
        .collect();
    for effect in [1500.0, 1000.0, 800.0, 600.0] {
        let free: Vec<&(EventKind, String)> = pool.iter().filter(|(_, c)| !used.contains(c)).collect();
        if free.len() < 2 {
            break;
        }
        let i = rng.random_range(0..free.len());
        let mut j = rng.random_range(0..free.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (free[i].clone(), free[j].clone());
        used.insert(a.1.clone());
        used.insert(b.1.clone());
        pairs.push(PlantedPair {
            a,
            b,
            carrier_p: 0.04,
            single_p: 0.04,
        });
        effects.push(effect);
    }

    let truth = GroundTruth {
        quarters: t,
        intercept: CostVector([60.0, 110.0, 30.0, 15.0, 15.0, 90.0, 50.0]),
        age_effect: CostVector([1.5, 1.0, 2.0, 0.2, 0.3, 0.5, 0.2]),
        male_effect: CostVector([0.0, 0.0, 40.0, 0.0, 0.0, 30.0, 0.0]),
        recency_weights: recency_weights(t),
        kind_shares: kind_share_table(),
        interaction_shares: shares(&[(HOS, 0.5), (MED, 0.4), (PRA, 0.1)]),
        additive,
        interactions: pairs
            .iter()
            .zip(&effects)
            .map(|(p, &m)| PairEffect {
                code_a: p.a.1.clone(),
                code_b: p.b.1.clone(),
                multiplicative_effect: m,
            })
            .collect(),
        interaction_strength: spec.interaction_strength,
        noise_scale: spec.noise_scale,
        linear: spec.interaction_strength == 0.0,
    };
    let effect_of = |kind: EventKind, code: &str| -> f64 {
        truth
            .additive
            .iter()
            .find(|e| e.kind == kind && e.code == code)
            .map_or(0.0, |e| e.additive_effect)
    };

    let frailty_noise: Normal<f64> = Normal::new(0.0, 0.7).expect("valid normal");
    let mut records = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let male = rng.random_bool(0.5);
        let age_end = rng.random_range(18..=90) as f64;
        let frailty = frailty_noise.sample(&mut rng).exp() * (0.5 + age_end / 80.0);
        let mut events: Vec<CodedEvent> = Vec::new();
        let mut push = |kind: EventKind, code: String, quarter: usize| {
            events.push(CodedEvent {
                kind,
                code,
                quarter,
            })
        };

        let n_chronic = (Poisson::new(0.4 + frailty).expect("positive rate").sample(&mut rng) as usize).min(8);
        for _ in 0..n_chronic {
            let kind = draw_kind(&mut rng, &CHRONIC_KINDS);
            let code = catalog.draw(&mut rng, kind);
            let onset = rng.random_range(0..t);
            for q in onset..t {
                if rng.random_bool(0.55) {
                    push(kind, code.clone(), q);
                }
            }
        }
        let acute = Poisson::new(0.25 + 0.35 * frailty).expect("positive rate");
        for q in 0..t {
            let k = acute.sample(&mut rng) as usize;
            for _ in 0..k {
                let kind = draw_kind(&mut rng, &ACUTE_KINDS);
                let code = catalog.draw(&mut rng, kind);
                push(kind, code, q);
            }
        }
        for pair in &pairs {
            let u: f64 = rng.random();
            let carries = if u < pair.carrier_p {
                (true, true)
            } else if u < pair.carrier_p + pair.single_p {
                (true, false)
            } else if u < pair.carrier_p + 2.0 * pair.single_p {
                (false, true)
            } else {
                (false, false)
            };
            for (on, (kind, code)) in [(carries.0, &pair.a), (carries.1, &pair.b)] {
                if on {
                    // Chronic: recorded from onset on, at least at onset.
                    let onset = rng.random_range(0..t);
                    push(*kind, code.clone(), onset);
                    for q in onset + 1..t {
                        if rng.random_bool(PAIR_PERSISTENCE) {
                            push(*kind, code.clone(), q);
                        }
                    }
                }
            }
        }
        for q in 0..t {
            push(EventKind::Sex, if male { MALE } else { FEMALE }.to_string(), q);
        }
        events.sort_by(|a, b| (a.quarter, a.kind, &a.code).cmp(&(b.quarter, b.kind, &b.code)));

        let mut quarterly = vec![0.0; t];
        for e in &events {
            quarterly[e.quarter] += effect_of(e.kind, &e.code);
        }
        let mut numerics = Vec::with_capacity(2 * t);
        for (q, base_cost) in quarterly.iter().enumerate() {
            numerics.push(NumericEvent {
                name: AGE_EVENT.to_string(),
                value: age_end - (t - 1 - q) as f64 / 4.0,
                quarter: q,
            });
            let realised = base_cost * lognormal_factor(&mut rng, spec.noise_scale);
            numerics.push(NumericEvent {
                name: COST_EVENT.to_string(),
                value: realised,
                quarter: q,
            });
        }

        let mut record = ClaimsRecord::new(format!("P{p:06}"), events, numerics, None, true, t);
        let expected = truth.expected_cost(&record);
        let factor = lognormal_factor(&mut rng, spec.noise_scale);
        record.target = Some(CostVector(expected.0.map(|v| v * factor)));
        records.push(record);
    }
    Ok(SyntheticDataset { records, truth })
}
