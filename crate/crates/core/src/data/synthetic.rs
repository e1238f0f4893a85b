use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureTable};
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Sign of a random affine logit (sigmoid thresholded at 0.5).
    LinearLogit,
    /// Outside vs. inside the source median radius.
    Radial,
}

impl LabelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::LinearLogit => "linear_logit",
            LabelRule::Radial => "radial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShiftSpec {
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Fraction of target mass drawn from the source component.
    pub overlap: f64,
    /// Offset of the off-support component along axis 0, in standard deviations.
    pub separation: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.dim == 0 {
            return Err(DataError::BadSynthetic("dim must be >= 1".into()));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(DataError::BadSynthetic("sample counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(DataError::BadSynthetic(format!(
                "overlap {} outside [0, 1]",
                self.overlap
            )));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(DataError::BadSynthetic(format!(
                "separation {} must be finite and >= 0",
                self.separation
            )));
        }
        Ok(())
    }
}

/// The labeling function shared by source and target draws.
#[derive(Debug, Clone, PartialEq)]
pub enum Labeler {
    Linear { normal: Array1<f64>, offset: f64 },
    Radial { radius: f64 },
}

impl Labeler {
    pub fn label(&self, x: ArrayView1<'_, f64>) -> usize {
        match self {
            Labeler::Linear { normal, offset } => {
                let logit = normal.dot(&x) + offset;
                usize::from(1.0 / (1.0 + (-logit).exp()) >= 0.5)
            }
            Labeler::Radial { radius } => usize::from(x.dot(&x).sqrt() > *radius),
        }
    }
}

/// Output of [`make_gaussian_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianShift {
    pub source: FeatureTable,
    pub target: FeatureTable,
    /// Per target row: drawn from the source component.
    pub target_in_source_component: Vec<bool>,
    pub labeler: Labeler,
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Source ~ N(0, I); target ~ overlap·N(0, I) + (1 − overlap)·N(separation·e₀, I).
///
/// Labels come from one labeler applied to both tables, so Y|X is the same
/// on each side. Source ids are `s{i}`, target ids `t{j}`.
pub fn make_gaussian_shift(spec: &SyntheticShiftSpec) -> Result<GaussianShift, DataError> {
    spec.validate()?;
    let mut rng = seeded(spec.seed, stream::SYNTHETIC);
    let d = spec.dim;

    let mut normal = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    let norm = normal.dot(&normal).sqrt();
    if norm > 0.0 {
        normal /= norm;
    } else {
        normal[0] = 1.0;
    }
    let offset = 0.5 * rng.sample::<f64, _>(StandardNormal);

    let source = normal_matrix(&mut rng, spec.n_source, d);
    let mut target = Array2::zeros((spec.n_target, d));
    let mut in_source = Vec::with_capacity(spec.n_target);
    for mut row in target.rows_mut() {
        let from_source = rng.random::<f64>() < spec.overlap;
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        if !from_source {
            row[0] += spec.separation;
        }
        in_source.push(from_source);
    }

    let labeler = match spec.label_rule {
        LabelRule::LinearLogit => Labeler::Linear { normal, offset },
        LabelRule::Radial => Labeler::Radial {
            radius: median(source.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()),
        },
    };
    let label_all = |m: &Array2<f64>| m.rows().into_iter().map(|r| labeler.label(r)).collect();
    let source_labels = label_all(&source);
    let target_labels = label_all(&target);

    let source = FeatureTable::new(
        (0..spec.n_source).map(|i| format!("s{i}")).collect(),
        source,
        Some(source_labels),
        None,
    )?;
    let target = FeatureTable::new(
        (0..spec.n_target).map(|j| format!("t{j}")).collect(),
        target,
        Some(target_labels),
        None,
    )?;
    Ok(GaussianShift {
        source,
        target,
        target_in_source_component: in_source,
        labeler,
    })
}
