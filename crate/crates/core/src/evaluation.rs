//! Coverage curves, MAD, the bias-variance proxy, the ESS term of the
//! coverage bound, and per-run reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::CalibrationMode;
use crate::digits::{fmt_real, to_json_sig17};
use crate::weighting::WeightMethod;

pub const DEFAULT_DELTA: f64 = 0.05;
/// Tolerance for `proxy` and `mad` consistency checks.
pub const REPORT_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no rows to evaluate")]
    Empty,
    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid report input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `{0.50, 0.55, …, 0.90}`.
pub fn default_levels() -> Vec<f64> {
    (0..9).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// `{0.50, 0.55, …, 0.95}`.
pub fn extended_levels() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub n_evaluated: usize,
}

impl CoverageCurve {
    pub fn new(levels: Vec<f64>, empirical: Vec<f64>, n_evaluated: usize) -> Result<Self, EvalError> {
        if levels.len() != empirical.len() {
            return Err(EvalError::LengthMismatch {
                what: "coverage values",
                expected: levels.len(),
                found: empirical.len(),
            });
        }
        if levels.is_empty() {
            return Err(EvalError::Empty);
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EvalError::Invalid("levels must be strictly increasing".into()));
        }
        if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(EvalError::Invalid("levels must lie in (0, 1)".into()));
        }
        if empirical.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(EvalError::Invalid("coverage values must lie in [0, 1]".into()));
        }
        Ok(Self {
            levels,
            empirical,
            n_evaluated,
        })
    }
}

/// Fraction of rows whose label lies in its set.
pub fn empirical_coverage(sets: &[Vec<usize>], labels: &[usize]) -> Result<f64, EvalError> {
    if sets.is_empty() {
        return Err(EvalError::Empty);
    }
    if sets.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            what: "labels",
            expected: sets.len(),
            found: labels.len(),
        });
    }
    let hits = sets.iter().zip(labels).filter(|(s, y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Mean absolute gap between empirical and nominal coverage.
pub fn mad(curve: &CoverageCurve) -> f64 {
    let k = curve.levels.len() as f64;
    curve
        .levels
        .iter()
        .zip(&curve.empirical)
        .map(|(l, c)| (c - l).abs())
        .sum::<f64>()
        / k
}

/// `mmd + √(1/ess)`.
pub fn bias_variance_proxy(mmd: f64, ess: f64) -> f64 {
    mmd + (1.0 / ess).sqrt()
}

/// `(5 + √(½ ln(1/δ))) · √(1/ess)`.
pub fn coverage_bound_variance_term(ess: f64, delta: f64) -> f64 {
    (5.0 + (0.5 * (1.0 / delta).ln()).sqrt()) * (1.0 / ess).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: WeightMethod,
    pub mode: CalibrationMode,
    pub curve: CoverageCurve,
    pub mad: f64,
    pub ess: f64,
    pub mmd: f64,
    pub proxy: f64,
    pub bound_variance_term: f64,
    pub retained_fraction: f64,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
}

/// Everything a report needs that it cannot recompute itself.
#[derive(Debug, Clone)]
pub struct ReportInputs {
    pub method: WeightMethod,
    pub mode: CalibrationMode,
    pub curve: CoverageCurve,
    pub ess: f64,
    pub mmd: f64,
    pub retained_fraction: f64,
    pub seed: u64,
    pub delta: f64,
    pub config: BTreeMap<String, String>,
}

/// Fills a report, recomputing `mad`, `proxy` and the bound term.
pub fn build_report(inputs: ReportInputs) -> Result<ExperimentReport, EvalError> {
    let ReportInputs {
        method,
        mode,
        curve,
        ess,
        mmd,
        retained_fraction,
        seed,
        delta,
        config,
    } = inputs;
    let curve = CoverageCurve::new(curve.levels, curve.empirical, curve.n_evaluated)?;
    if !(ess >= 1.0 && ess.is_finite()) {
        return Err(EvalError::Invalid(format!("ess {ess} below 1")));
    }
    if !(mmd >= 0.0 && mmd.is_finite()) {
        return Err(EvalError::Invalid(format!("mmd {mmd} must be finite and >= 0")));
    }
    if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
        return Err(EvalError::Invalid(format!(
            "retained fraction {retained_fraction} outside (0, 1]"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EvalError::Invalid(format!("delta {delta} outside (0, 1)")));
    }
    Ok(ExperimentReport {
        method,
        mode,
        mad: mad(&curve),
        curve,
        ess,
        mmd,
        proxy: bias_variance_proxy(mmd, ess),
        bound_variance_term: coverage_bound_variance_term(ess, delta),
        retained_fraction,
        seed,
        config,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(to_json_sig17(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One line of the aggregate table.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: WeightMethod,
    pub mode: CalibrationMode,
    pub level: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub mad_mean: f64,
    pub mad_std: f64,
    pub ess_mean: f64,
    pub mmd_mean: f64,
    pub retained_fraction_mean: f64,
}

pub const AGGREGATE_HEADER: [&str; 11] = [
    "dataset",
    "method",
    "mode",
    "level",
    "coverage_mean",
    "coverage_std",
    "mad_mean",
    "mad_std",
    "ess_mean",
    "mmd_mean",
    "retained_fraction_mean",
];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Means and spreads over seeds, one row per (method, mode, level) in
/// sorted order. Reports in a group must share a level grid.
pub fn aggregate(dataset: &str, reports: &[ExperimentReport]) -> Result<Vec<AggregateRow>, EvalError> {
    let mut groups: BTreeMap<(WeightMethod, CalibrationMode), Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.method, r.mode)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((method, mode), group) in groups {
        let levels = &group[0].curve.levels;
        if group.iter().any(|r| &r.curve.levels != levels) {
            return Err(EvalError::Invalid(format!(
                "{}/{} reports use different level grids",
                method.as_str(),
                mode.as_str()
            )));
        }
        let col = |f: &dyn Fn(&ExperimentReport) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
        let mads = col(&|r| r.mad);
        let ess = mean(&col(&|r| r.ess));
        let mmd = mean(&col(&|r| r.mmd));
        let kept = mean(&col(&|r| r.retained_fraction));
        for (k, &level) in levels.iter().enumerate() {
            let cov = col(&|r| r.curve.empirical[k]);
            rows.push(AggregateRow {
                dataset: dataset.to_string(),
                method,
                mode,
                level,
                coverage_mean: mean(&cov),
                coverage_std: std(&cov),
                mad_mean: mean(&mads),
                mad_std: std(&mads),
                ess_mean: ess,
                mmd_mean: mmd,
                retained_fraction_mean: kept,
            });
        }
    }
    Ok(rows)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", AGGREGATE_HEADER.join(","))?;
    for r in rows {
        let reals = [
            r.level,
            r.coverage_mean,
            r.coverage_std,
            r.mad_mean,
            r.mad_std,
            r.ess_mean,
            r.mmd_mean,
            r.retained_fraction_mean,
        ];
        let reals: Vec<String> = reals.iter().map(|&x| fmt_real(x)).collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.dataset,
            r.method.as_str(),
            r.mode.as_str(),
            reals.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(levels: Vec<f64>, empirical: Vec<f64>) -> CoverageCurve {
        CoverageCurve::new(levels, empirical, 10).unwrap()
    }

    #[test]
    fn level_grids() {
        let d = default_levels();
        assert_eq!(d.len(), 9);
        assert_eq!(d[0], 0.5);
        assert_eq!(d[8], 0.9);
        assert_eq!(extended_levels()[9], 0.95);
    }

    #[test]
    fn coverage_examples() {
        let full = vec![vec![0, 1]; 3];
        assert_eq!(empirical_coverage(&full, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&vec![vec![]; 3], &[0, 1, 0]).unwrap(), 0.0);
        let sets = vec![vec![0], vec![0, 1], vec![1]];
        assert!((empirical_coverage(&sets, &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(empirical_coverage(&[], &[]).is_err());
    }

    #[test]
    fn mad_examples() {
        let l = default_levels();
        assert_eq!(mad(&curve(l.clone(), l.clone())), 0.0);
        let shifted: Vec<f64> = l.iter().map(|x| x - 0.05).collect();
        assert!((mad(&curve(l, shifted)) - 0.05).abs() < 1e-12);
        assert!((mad(&curve(vec![0.5, 0.9], vec![0.4, 0.95])) - 0.075).abs() < 1e-12);
    }

    #[test]
    fn proxy_and_bound() {
        assert!((bias_variance_proxy(0.0, 100.0) - 0.1).abs() < 1e-15);
        assert_eq!(bias_variance_proxy(0.0, 1.0), 1.0);
        assert!((bias_variance_proxy(0.3, 4.0) - 0.8).abs() < 1e-15);
        assert!((coverage_bound_variance_term(1.0, (-2.0f64).exp()) - 6.0).abs() < 1e-12);
        assert!(coverage_bound_variance_term(1e12, 0.05) < 1e-5);
        assert!((coverage_bound_variance_term(100.0, 0.05) - 0.6224).abs() < 1e-4);
    }

    #[test]
    fn report_json_round_trips() {
        let r = build_report(ReportInputs {
            method: WeightMethod::Kmm,
            mode: CalibrationMode::Global,
            curve: curve(vec![0.5, 0.9], vec![0.41, 0.93]),
            ess: 123.456,
            mmd: 0.1 + 0.2,
            retained_fraction: 1.0,
            seed: 7,
            delta: DEFAULT_DELTA,
            config: BTreeMap::from([("kmm.b_bound".into(), "30".into())]),
        })
        .unwrap();
        assert_eq!(r.proxy, r.mmd + (1.0 / r.ess).sqrt());
        let s = r.to_json().unwrap();
        assert_eq!(ExperimentReport::from_json(&s).unwrap(), r);
        assert!(s.starts_with("{\"method\":\"kmm\",\"mode\":\"global\""));
    }
}
