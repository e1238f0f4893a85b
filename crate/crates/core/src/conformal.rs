//! Nonconformity scores, weighted quantiles, prediction sets, and global and
//! per-class (Mondrian) calibration.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;

/// Slack allowed when comparing a cumulative weight against the level.
pub const QUANTILE_TOL: f64 = 1e-12;
const POOL_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConformalError {
    #[error("no calibration records")]
    Empty,
    #[error("level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("score for {0} is not finite")]
    NonFiniteScore(String),
    #[error("weight for {0} is negative or non-finite")]
    BadWeight(String),
    #[error("pool weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("class {0} has zero total weight")]
    ZeroClassWeight(usize),
    #[error("table has no class probabilities")]
    MissingProbs,
    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: String,
    pub score: f64,
    pub label: usize,
    /// Normalized within the record's pool.
    pub weight: f64,
}

/// `1 − probs[label]`.
pub fn score_from_probs(probs: ArrayView1<'_, f64>, label: usize) -> Result<f64, ConformalError> {
    probs
        .get(label)
        .map(|p| 1.0 - p)
        .ok_or(ConformalError::LabelOutOfRange {
            label,
            classes: probs.len(),
        })
}

fn check_level(level: f64) -> Result<(), ConformalError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::BadLevel(level))
    }
}

fn check_records(records: &[CalibrationRecord]) -> Result<(), ConformalError> {
    if records.is_empty() {
        return Err(ConformalError::Empty);
    }
    for r in records {
        if !r.score.is_finite() {
            return Err(ConformalError::NonFiniteScore(r.id.clone()));
        }
        if !(r.weight.is_finite() && r.weight >= 0.0) {
            return Err(ConformalError::BadWeight(r.id.clone()));
        }
    }
    Ok(())
}

/// Smallest score whose cumulative mass reaches `level`, with `masses`
/// aligned to `records` (not necessarily summing to one). Records are
/// visited by (score, id); a tied score contributes all its mass at once.
fn quantile_of(records: &[CalibrationRecord], masses: &[f64], level: f64) -> f64 {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .score
            .total_cmp(&records[b].score)
            .then_with(|| records[a].id.cmp(&records[b].id))
    });
    let mut cum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let score = records[order[k]].score;
        while k < order.len() && records[order[k]].score == score {
            cum += masses[order[k]];
            k += 1;
        }
        if cum >= level - QUANTILE_TOL {
            return score;
        }
    }
    f64::INFINITY
}

/// `inf { t : Σ wᵢ 1{sᵢ ≤ t} ≥ level }` over a normalized pool.
pub fn weighted_quantile(records: &[CalibrationRecord], level: f64) -> Result<f64, ConformalError> {
    check_level(level)?;
    check_records(records)?;
    let masses: Vec<f64> = records.iter().map(|r| r.weight).collect();
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > POOL_SUM_TOL {
        return Err(ConformalError::NotNormalized(total));
    }
    Ok(quantile_of(records, &masses, level))
}

/// Quantile of the pool plus a point mass at +∞ carrying `test_weight`,
/// with `raw` calibration weights; the result is +∞ when the finite scores
/// cannot reach `level`.
pub fn tibshirani_quantile(
    records: &[CalibrationRecord],
    raw: &[f64],
    test_weight: f64,
    level: f64,
) -> Result<f64, ConformalError> {
    check_level(level)?;
    check_records(records)?;
    if raw.len() != records.len() {
        return Err(ConformalError::LengthMismatch {
            what: "raw weights",
            expected: records.len(),
            found: raw.len(),
        });
    }
    let total: f64 = raw.iter().sum::<f64>() + test_weight;
    if !(total > 0.0) {
        return Err(ConformalError::NotNormalized(total));
    }
    let masses: Vec<f64> = raw.iter().map(|w| w / total).collect();
    Ok(quantile_of(records, &masses, level))
}

/// `{ y : 1 − probs[y] ≤ threshold }`, ascending.
pub fn prediction_set(probs: ArrayView1<'_, f64>, threshold: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| 1.0 - **p <= threshold)
        .map(|(y, _)| y)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    Global,
    Mondrian,
}

impl CalibrationMode {
    pub const ALL: [CalibrationMode; 2] = [CalibrationMode::Global, CalibrationMode::Mondrian];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::Global => "global",
            CalibrationMode::Mondrian => "mondrian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    Global,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    pub mode: CalibrationMode,
    pub thresholds: BTreeMap<GroupKey, f64>,
    pub level: f64,
}

impl Calibrator {
    /// The threshold applied to a row predicted as `class`. A Mondrian
    /// calibrator without records for that class abstains from excluding
    /// anything (+∞).
    pub fn threshold_for(&self, class: usize) -> f64 {
        let key = match self.mode {
            CalibrationMode::Global => GroupKey::Global,
            CalibrationMode::Mondrian => GroupKey::Class(class),
        };
        self.thresholds.get(&key).copied().unwrap_or(f64::INFINITY)
    }
}

/// Records with weights normalized over the whole pool.
pub fn build_records(
    ids: &[String],
    scores: &[f64],
    labels: &[usize],
    raw: &[f64],
) -> Result<Vec<CalibrationRecord>, ConformalError> {
    let n = ids.len();
    for (what, found) in [("scores", scores.len()), ("labels", labels.len()), ("raw weights", raw.len())] {
        if found != n {
            return Err(ConformalError::LengthMismatch {
                what,
                expected: n,
                found,
            });
        }
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(ConformalError::NotNormalized(total));
    }
    Ok((0..n)
        .map(|i| CalibrationRecord {
            id: ids[i].clone(),
            score: scores[i],
            label: labels[i],
            weight: raw[i] / total,
        })
        .collect())
}

pub fn calibrate_global(records: &[CalibrationRecord], level: f64) -> Result<Calibrator, ConformalError> {
    let t = weighted_quantile(records, level)?;
    Ok(Calibrator {
        mode: CalibrationMode::Global,
        thresholds: BTreeMap::from([(GroupKey::Global, t)]),
        level,
    })
}

fn class_pools(
    records: &[CalibrationRecord],
    raw: &[f64],
) -> Result<BTreeMap<usize, (Vec<CalibrationRecord>, Vec<f64>)>, ConformalError> {
    if raw.len() != records.len() {
        return Err(ConformalError::LengthMismatch {
            what: "raw weights",
            expected: records.len(),
            found: raw.len(),
        });
    }
    let mut pools: BTreeMap<usize, (Vec<CalibrationRecord>, Vec<f64>)> = BTreeMap::new();
    for (r, &w) in records.iter().zip(raw) {
        let pool = pools.entry(r.label).or_default();
        pool.0.push(r.clone());
        pool.1.push(w);
    }
    Ok(pools)
}

/// Per-class quantiles with `raw` renormalized inside each class.
pub fn calibrate_mondrian(
    records: &[CalibrationRecord],
    level: f64,
    raw: &[f64],
) -> Result<Calibrator, ConformalError> {
    check_level(level)?;
    check_records(records)?;
    let mut thresholds = BTreeMap::new();
    for (class, (mut pool, w)) in class_pools(records, raw)? {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(ConformalError::ZeroClassWeight(class));
        }
        for (r, wi) in pool.iter_mut().zip(&w) {
            r.weight = wi / total;
        }
        thresholds.insert(GroupKey::Class(class), weighted_quantile(&pool, level)?);
    }
    Ok(Calibrator {
        mode: CalibrationMode::Mondrian,
        thresholds,
        level,
    })
}

/// Like the global and Mondrian rules, but each pool also carries a test
/// point at +∞ whose weight is the pool's mean raw weight.
pub fn calibrate_tibshirani(
    records: &[CalibrationRecord],
    level: f64,
    raw: &[f64],
    mode: CalibrationMode,
) -> Result<Calibrator, ConformalError> {
    check_level(level)?;
    check_records(records)?;
    let mut thresholds = BTreeMap::new();
    match mode {
        CalibrationMode::Global => {
            let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
            thresholds.insert(GroupKey::Global, tibshirani_quantile(records, raw, mean, level)?);
        }
        CalibrationMode::Mondrian => {
            for (class, (pool, w)) in class_pools(records, raw)? {
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(ConformalError::ZeroClassWeight(class));
                }
                let mean = total / w.len() as f64;
                thresholds.insert(GroupKey::Class(class), tibshirani_quantile(&pool, &w, mean, level)?);
            }
        }
    }
    Ok(Calibrator {
        mode,
        thresholds,
        level,
    })
}

/// Argmax per row, ties to the lower class index.
pub fn argmax_classes(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict_all(
    test: &FeatureTable,
    calibrator: &Calibrator,
    predicted_class: &[usize],
) -> Result<Vec<Vec<usize>>, ConformalError> {
    let probs = test.class_probs().ok_or(ConformalError::MissingProbs)?;
    if predicted_class.len() != probs.nrows() {
        return Err(ConformalError::LengthMismatch {
            what: "predicted classes",
            expected: probs.nrows(),
            found: predicted_class.len(),
        });
    }
    Ok(probs
        .rows()
        .into_iter()
        .zip(predicted_class)
        .map(|(row, &c)| prediction_set(row, calibrator.threshold_for(c)))
        .collect())
}
