use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{canonical_order, check_samples, SolverStats, WeightError, WeightMethod, WeightSet};
use crate::linalg::{norm_inf, solve_small};

/// η̂ is clipped to `[ETA_CLIP, 1 − ETA_CLIP]` before the odds transform.
pub const ETA_CLIP: f64 = 1e-6;
pub const NEWTON_BUDGET: usize = 100;

/// `(n/m) · η/(1 − η)` with η clipped away from 0 and 1.
pub fn odds_weight(eta: f64, n: usize, m: usize) -> f64 {
    let eta = eta.clamp(ETA_CLIP, 1.0 - ETA_CLIP);
    (n as f64 / m as f64) * eta / (1.0 - eta)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic regression with a ridge penalty on the slopes (the
/// intercept is unpenalized), fitted by damped Newton steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Array1<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized negative log-likelihood at the returned parameters.
    pub loss: f64,
    pub grad_norm: f64,
}

impl LogisticFit {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[bool], reg: f64, max_iter: usize) -> Result<Self, WeightError> {
        if x.nrows() != y.len() {
            return Err(WeightError::BadConfig(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(WeightError::BadConfig(format!("reg must be >= 0, got {reg}")));
        }
        let (n, d) = x.dim();
        let p = d + 1;
        let loss_at = |theta: &[f64]| -> f64 {
            let mut total = 0.5 * reg * theta[..d].iter().map(|b| b * b).sum::<f64>();
            for (row, &yi) in x.rows().into_iter().zip(y) {
                let z = row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
                total += softplus(z) - if yi { z } else { 0.0 };
            }
            total
        };
        let gradient = |theta: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
            let mut g = vec![0.0; p];
            let mut h = vec![vec![0.0; p]; p];
            for (row, &yi) in x.rows().into_iter().zip(y) {
                let z = row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
                let mu = sigmoid(z);
                let r = mu - f64::from(u8::from(yi));
                let s = mu * (1.0 - mu);
                for a in 0..p {
                    let xa = if a < d { row[a] } else { 1.0 };
                    g[a] += r * xa;
                    for b in a..p {
                        let xb = if b < d { row[b] } else { 1.0 };
                        h[a][b] += s * xa * xb;
                    }
                }
            }
            for a in 0..p {
                if a < d {
                    g[a] += reg * theta[a];
                    h[a][a] += reg;
                }
                h[a][a] += 1e-12;
                for b in 0..a {
                    h[a][b] = h[b][a];
                }
            }
            (g, h)
        };

        let tol = 1e-9 * (1.0 + n as f64);
        let mut theta = vec![0.0; p];
        let mut loss = loss_at(&theta);
        let (mut g, mut h) = gradient(&theta);
        let mut iterations = 0;
        while norm_inf(&g) > tol && iterations < max_iter {
            iterations += 1;
            let step = solve_small(h.clone(), g.clone()).unwrap_or_else(|| g.clone());
            let slope: f64 = step.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                let l = loss_at(&trial);
                if l <= loss - 1e-4 * t * slope {
                    theta = trial;
                    loss = l;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
            (g, h) = gradient(&theta);
        }
        let grad_norm = norm_inf(&g);
        Ok(Self {
            coef: Array1::from(theta[..d].to_vec()),
            intercept: theta[d],
            iterations,
            converged: grad_norm <= tol,
            loss,
            grad_norm,
        })
    }

    pub fn predict_proba(&self, x: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.coef.dot(&x) + self.intercept)
    }

    pub fn predict_proba_all(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.rows().into_iter().map(|r| self.predict_proba(r)))
    }
}

/// Odds of a cal-vs-test logistic domain classifier at each calibration
/// point. Non-convergence within the Newton budget is reported in
/// `solver`, with the best iterate used.
pub fn classifier_ratio_weights(
    cal: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
    reg: f64,
) -> Result<WeightSet, WeightError> {
    check_samples(cal, test)?;
    let (n, m) = (cal.nrows(), test.nrows());
    let stacked = ndarray::concatenate(
        ndarray::Axis(0),
        &[
            cal.select(ndarray::Axis(0), &canonical_order(cal)).view(),
            test.select(ndarray::Axis(0), &canonical_order(test)).view(),
        ],
    )
    .expect("same width");
    let domain: Vec<bool> = (0..n + m).map(|i| i >= n).collect();
    let fit = LogisticFit::fit(stacked.view(), &domain, reg, NEWTON_BUDGET)?;
    let raw = Array1::from_iter(
        cal.rows()
            .into_iter()
            .map(|x| odds_weight(fit.predict_proba(x), n, m)),
    );
    let mut ws = WeightSet::from_raw(raw, WeightMethod::Classifier)?;
    ws.solver = Some(SolverStats {
        iterations: fit.iterations,
        converged: fit.converged,
        objective: fit.loss,
        kkt_stationarity: fit.grad_norm,
        kkt_feasibility: 0.0,
    });
    Ok(ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn odds_examples() {
        assert_eq!(odds_weight(0.5, 10, 10), 1.0);
        let delta: f64 = 0.1;
        let w = odds_weight(1.0 - delta * delta, 10, 10);
        assert!((w - 99.0).abs() < 1e-9);
        let top = 1.0 - ETA_CLIP;
        assert_eq!(odds_weight(1.0, 5, 5), top / (1.0 - top));
        assert_eq!(odds_weight(0.5, 20, 10), 2.0);
    }

    #[test]
    fn newton_matches_one_dimensional_optimum() {
        // With only an intercept, the MLE is logit of the positive rate.
        let x = ndarray::Array2::<f64>::zeros((8, 1));
        let y = [true, true, true, false, false, false, false, false];
        let fit = LogisticFit::fit(x.view(), &y, 1.0, 100).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept - (3.0f64 / 5.0).ln()).abs() < 1e-9);
        assert!((fit.predict_proba(array![0.0].view()) - 3.0 / 8.0).abs() < 1e-9);
    }

    #[test]
    fn separable_data_stays_finite_under_ridge() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let fit = LogisticFit::fit(x.view(), &[false, false, true, true], 1.0, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.coef[0] > 0.0 && fit.coef[0].is_finite());
    }

    #[test]
    fn identical_samples_give_near_unit_weights() {
        let x = array![[0.0, 1.0], [1.0, -1.0], [0.5, 0.3], [-0.7, 0.2]];
        let w = classifier_ratio_weights(x.view(), x.view(), 1.0).unwrap();
        assert!(w.raw.iter().all(|&v| (v - 1.0).abs() < 1e-9), "{:?}", w.raw);
    }
}
