use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;

use super::{canonical_order, WeightError, WeightMethod, WeightSet};
use crate::data::rounded_count;
use crate::rng::{seeded, stream};

pub const KDE_BANDWIDTHS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const DENSITY_FLOOR: f64 = 1e-300;
pub const WEIGHT_CLIP: f64 = 1e6;
/// Used when neither sample has enough points to hold any out.
const FALLBACK_BANDWIDTH: f64 = 1.0;

/// Log of the Gaussian KDE over `points[order]` evaluated at `x`.
pub fn log_density(points: ArrayView2<'_, f64>, order: &[usize], x: ArrayView1<'_, f64>, h: f64) -> f64 {
    let d = points.ncols() as f64;
    let scale = -0.5 / (h * h);
    let exps: Vec<f64> = order
        .iter()
        .map(|&i| {
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2 * scale
        })
        .collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
    lse - (order.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * h * h).ln()
}

struct Holdout {
    fit: Vec<usize>,
    held: Vec<usize>,
}

fn holdout<R: rand::Rng>(x: ArrayView2<'_, f64>, fraction: f64, rng: &mut R) -> Holdout {
    let canon = canonical_order(x);
    let n = canon.len();
    if n < 2 {
        return Holdout {
            fit: canon,
            held: Vec::new(),
        };
    }
    let mut idx = canon.clone();
    idx.shuffle(rng);
    let k = rounded_count(fraction, n).clamp(1, n - 1);
    let held = idx[..k].to_vec();
    // Summation order is canonical, not shuffle order.
    let mut is_held = vec![false; n];
    held.iter().for_each(|&i| is_held[i] = true);
    let fit = canon.into_iter().filter(|&i| !is_held[i]).collect();
    Holdout { fit, held }
}

/// Summed held-out log-likelihood of both samples for each bandwidth in
/// [`KDE_BANDWIDTHS`].
pub fn kde_bandwidth_scores(
    cal: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
    holdout_fraction: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, WeightError> {
    check(cal, test, holdout_fraction)?;
    let mut rng = seeded(seed, stream::KDE_HOLDOUT);
    let splits = [
        (cal, holdout(cal, holdout_fraction, &mut rng)),
        (test, holdout(test, holdout_fraction, &mut rng)),
    ];
    Ok(KDE_BANDWIDTHS
        .iter()
        .map(|&h| {
            let total: f64 = splits
                .iter()
                .flat_map(|(x, s)| {
                    s.held
                        .iter()
                        .map(move |&i| log_density(*x, &s.fit, x.row(i), h))
                })
                .sum();
            (h, total)
        })
        .collect())
}

fn check(cal: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>, holdout_fraction: f64) -> Result<(), WeightError> {
    if cal.ncols() != test.ncols() {
        return Err(WeightError::DimensionMismatch(cal.ncols(), test.ncols()));
    }
    for found in [cal.nrows(), test.nrows()] {
        if found == 0 {
            return Err(WeightError::TooFewPoints { needed: 1, found });
        }
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(WeightError::BadConfig(format!(
            "holdout_fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    Ok(())
}

/// `p̂_test(x) / max(p̂_cal(x), 1e-300)` at each calibration point, clipped
/// at 1e6, with one bandwidth shared by both densities.
pub fn kde_ratio_weights(
    cal: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
    holdout_fraction: f64,
    seed: u64,
) -> Result<WeightSet, WeightError> {
    let scores = kde_bandwidth_scores(cal, test, holdout_fraction, seed)?;
    let h = if cal.nrows() < 2 && test.nrows() < 2 {
        FALLBACK_BANDWIDTH
    } else {
        let mut best: Option<(f64, f64)> = None;
        for &(h, ll) in &scores {
            if ll > f64::NEG_INFINITY && best.is_none_or(|(_, b)| ll > b) {
                best = Some((h, ll));
            }
        }
        best.ok_or(WeightError::DegenerateDensity)?.0
    };
    let cal_order = canonical_order(cal);
    let test_order = canonical_order(test);
    let floor = DENSITY_FLOOR.ln();
    let clip = WEIGHT_CLIP.ln();
    let raw = Array1::from_iter(cal.rows().into_iter().map(|x| {
        let ls = log_density(cal, &cal_order, x, h).max(floor);
        let lt = log_density(test, &test_order, x, h);
        let lr = lt - ls;
        if lr >= clip {
            WEIGHT_CLIP
        } else {
            lr.exp()
        }
    }));
    WeightSet::from_raw(raw, WeightMethod::Kde)
}
