//! Calibration weights: uniform, KDE ratio, classifier odds, KMM and
//! two-stage selective KMM.

mod classifier;
mod kde;
mod kmm;

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::kernel::{mmd_squared_weighted, KernelContext, KernelError};
use crate::qp::QpError;

pub use classifier::{classifier_ratio_weights, odds_weight, LogisticFit, ETA_CLIP};
pub use kde::{kde_bandwidth_scores, kde_ratio_weights, log_density, DENSITY_FLOOR, KDE_BANDWIDTHS, WEIGHT_CLIP};
pub use kmm::{
    kmm_problem, select_targets, skmm_problem, solve_kmm, solve_skmm_joint, two_stage_skmm,
    two_stage_skmm_in, SkmmJoint,
};

/// Tolerance on `Σ w̃ = 1` when a vector is claimed to be normalized.
pub const NORMALIZED_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("weight vector is empty")]
    Empty,
    #[error("weight {index} is negative or non-finite ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("all weights are zero")]
    ZeroMass,
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid weighting config: {0}")]
    BadConfig(String),
    #[error("density estimate is zero on every held-out point at every bandwidth")]
    DegenerateDensity,
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Uniform,
    Kde,
    Classifier,
    Kmm,
    Skmm,
}

impl WeightMethod {
    pub const ALL: [WeightMethod; 5] = [
        WeightMethod::Uniform,
        WeightMethod::Kde,
        WeightMethod::Classifier,
        WeightMethod::Kmm,
        WeightMethod::Skmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightMethod::Uniform => "uniform",
            WeightMethod::Kde => "kde",
            WeightMethod::Classifier => "classifier",
            WeightMethod::Kmm => "kmm",
            WeightMethod::Skmm => "skmm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Optimizer diagnostics carried alongside a weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub raw: Array1<f64>,
    pub normalized: Array1<f64>,
    pub method: WeightMethod,
    pub ess: f64,
    /// Weighted MMD to the active target set, once attached.
    pub mmd: Option<f64>,
    pub selected_target_ids: Option<Vec<String>>,
    pub alpha: Option<Array1<f64>>,
    pub solver: Option<SolverStats>,
}

impl WeightSet {
    /// Normalizes `raw`; zero total mass is an error, never patched.
    pub fn from_raw(raw: Array1<f64>, method: WeightMethod) -> Result<Self, WeightError> {
        if raw.is_empty() {
            return Err(WeightError::Empty);
        }
        if let Some((index, &value)) = raw
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(WeightError::BadEntry { index, value });
        }
        let total = raw.sum();
        if total <= 0.0 {
            return Err(WeightError::ZeroMass);
        }
        let normalized = &raw / total;
        let ess = ess(normalized.view())?;
        Ok(Self {
            raw,
            normalized,
            method,
            ess,
            mmd: None,
            selected_target_ids: None,
            alpha: None,
            solver: None,
        })
    }

    pub fn n(&self) -> usize {
        self.raw.len()
    }

    /// Weighted MMD between the calibration sample and every target in `ctx`.
    ///
    /// Weights enter rescaled to mass `n` (that is, `n · normalized`), so
    /// methods whose raw weights live on different scales are compared on
    /// the same footing; for uniform weights this is the unweighted MMD.
    pub fn mmd_against(&self, ctx: &KernelContext) -> Result<f64, WeightError> {
        let w = &self.normalized * self.n() as f64;
        let a = Array1::ones(ctx.n_target());
        Ok(mmd_squared_weighted(ctx, w.view(), a.view())?.sqrt())
    }

    pub fn attach_mmd(&mut self, ctx: &KernelContext) -> Result<f64, WeightError> {
        let v = self.mmd_against(ctx)?;
        self.mmd = Some(v);
        Ok(v)
    }
}

/// `1 / Σ w̃ᵢ²` for a probability vector.
pub fn ess(normalized: ArrayView1<'_, f64>) -> Result<f64, WeightError> {
    if normalized.is_empty() {
        return Err(WeightError::Empty);
    }
    if let Some((index, &value)) = normalized
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(WeightError::BadEntry { index, value });
    }
    let total = normalized.sum();
    if (total - 1.0).abs() > NORMALIZED_TOL {
        return Err(WeightError::NotNormalized(total));
    }
    let n = normalized.len() as f64;
    Ok((1.0 / normalized.dot(&normalized)).clamp(1.0, n))
}

pub fn uniform_weights(n: usize) -> Result<WeightSet, WeightError> {
    let mut w = WeightSet::from_raw(Array1::ones(n), WeightMethod::Uniform)?;
    // 1/(n · (1/n)²) can land one ulp off n.
    w.ess = n as f64;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmmConfig {
    pub b_bound: f64,
    /// Mass slack; `None` means [`KmmConfig::default_epsilon`].
    pub epsilon: Option<f64>,
    pub tau: f64,
    pub alpha_threshold: f64,
    /// QP tolerance; `None` means [`crate::qp::default_tol`].
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for KmmConfig {
    fn default() -> Self {
        Self {
            b_bound: 30.0,
            epsilon: None,
            tau: 0.5,
            alpha_threshold: 0.2,
            tol: None,
            max_iter: crate::qp::DEFAULT_MAX_ITER,
        }
    }
}

impl KmmConfig {
    /// `B/√n`, capped at `1 − 1/√n` so that ε stays below 1.
    pub fn default_epsilon(b_bound: f64, n: usize) -> f64 {
        let root = (n as f64).sqrt();
        (b_bound / root).min(1.0 - 1.0 / root)
    }

    pub fn epsilon_for(&self, n: usize) -> f64 {
        self.epsilon
            .unwrap_or_else(|| Self::default_epsilon(self.b_bound, n))
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        let bad = |msg: String| Err(WeightError::BadConfig(msg));
        if !(self.b_bound > 0.0 && self.b_bound.is_finite()) {
            return bad(format!("b_bound must be positive, got {}", self.b_bound));
        }
        if let Some(e) = self.epsilon {
            if !(0.0..1.0).contains(&e) {
                return bad(format!("epsilon must lie in [0, 1), got {e}"));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha_threshold) {
            return bad(format!(
                "alpha_threshold must lie in [0, 1], got {}",
                self.alpha_threshold
            ));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return bad(format!("tol must be positive, got {t}"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        Ok(())
    }
}

pub(crate) fn check_samples(cal: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Result<(), WeightError> {
    if cal.ncols() != test.ncols() {
        return Err(WeightError::DimensionMismatch(cal.ncols(), test.ncols()));
    }
    for found in [cal.nrows(), test.nrows()] {
        if found < 2 {
            return Err(WeightError::TooFewPoints { needed: 2, found });
        }
    }
    Ok(())
}

/// Row indices sorted lexicographically by feature values. Estimators that
/// iterate in this order give the same per-row result however the caller
/// permutes its rows.
pub(crate) fn canonical_order(x: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_weight_sets() {
        let w = uniform_weights(4).unwrap();
        assert_eq!(w.normalized, array![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(w.ess, 4.0);
        assert_eq!(uniform_weights(1).unwrap().ess, 1.0);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(array![1.0, 0.0, 0.0].view()).unwrap(), 1.0);
        assert!((ess(array![0.75, 0.25].view()).unwrap() - 1.6).abs() < 1e-15);
        assert!(matches!(
            ess(array![0.5, 0.6].view()),
            Err(WeightError::NotNormalized(_))
        ));
    }

    #[test]
    fn zero_mass_is_an_error() {
        assert!(matches!(
            WeightSet::from_raw(array![0.0, 0.0], WeightMethod::Kde),
            Err(WeightError::ZeroMass)
        ));
        assert!(matches!(
            WeightSet::from_raw(array![1.0, -1.0], WeightMethod::Kde),
            Err(WeightError::BadEntry { index: 1, .. })
        ));
    }

    #[test]
    fn uniform_mmd_is_unweighted_mmd() {
        let s = array![[0.0], [1.0], [2.5]];
        let t = array![[0.5], [3.0]];
        let ctx = crate::kernel::gram_blocks(s.view(), t.view(), 1.0).unwrap();
        let mut w = uniform_weights(3).unwrap();
        let got = w.attach_mmd(&ctx).unwrap();
        let want = crate::kernel::mmd_squared(s.view(), t.view(), 1.0).unwrap().sqrt();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn default_epsilon_stays_below_one() {
        assert!((KmmConfig::default_epsilon(30.0, 10_000) - 0.3).abs() < 1e-15);
        assert!((KmmConfig::default_epsilon(30.0, 100) - 0.9).abs() < 1e-15);
        for n in [1, 2, 5, 50, 900, 5000] {
            assert!(KmmConfig::default_epsilon(30.0, n) < 1.0);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in WeightMethod::ALL {
            assert_eq!(WeightMethod::parse(m.as_str()), Some(m));
        }
        assert_eq!(WeightMethod::parse("kmmm"), None);
    }
}
