//! Oracles shared by the integration tests. Nothing here calls the solver.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::qp::QpProblem;

pub fn objective(p: &QpProblem, v: &[f64]) -> f64 {
    let n = v.len();
    let mut f = 0.0;
    for i in 0..n {
        f += p.linear[i] * v[i];
        for j in 0..n {
            f += 0.5 * v[i] * p.q_matrix[[i, j]] * v[j];
        }
    }
    f
}

fn feasible(p: &QpProblem, v: &[f64], tol: f64) -> bool {
    (0..v.len()).all(|i| v[i] >= p.lower[i] - tol && v[i] <= p.upper[i] + tol)
        && (0..p.ineq_rhs.len()).all(|k| {
            let s: f64 = (0..v.len()).map(|i| p.ineq_rows[[k, i]] * v[i]).sum();
            s <= p.ineq_rhs[k] + tol
        })
}

/// Exact minimizer by enumerating active sets: each coordinate at its lower
/// bound, upper bound or free, each row active or not. Every candidate is
/// the minimizer over an affine set; the best feasible one is optimal.
pub fn active_set_oracle(p: &QpProblem) -> Option<(Vec<f64>, f64)> {
    let n = p.dim();
    let r = p.ineq_rhs.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        for rows in 0..(1usize << r) {
            let mut eq_rows: Vec<Vec<f64>> = Vec::new();
            let mut eq_rhs = Vec::new();
            let mut c = code;
            for i in 0..n {
                match c % 3 {
                    1 => {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        eq_rows.push(e);
                        eq_rhs.push(p.lower[i]);
                    }
                    2 => {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        eq_rows.push(e);
                        eq_rhs.push(p.upper[i]);
                    }
                    _ => {}
                }
                c /= 3;
            }
            for k in 0..r {
                if rows & (1 << k) != 0 {
                    eq_rows.push(p.ineq_rows.row(k).to_vec());
                    eq_rhs.push(p.ineq_rhs[k]);
                }
            }
            let e = eq_rows.len();
            if e > n {
                continue;
            }
            let dim = n + e;
            let mut kkt = DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = DVector::<f64>::zeros(dim);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = p.q_matrix[[i, j]];
                }
                rhs[i] = -p.linear[i];
            }
            for (k, row) in eq_rows.iter().enumerate() {
                for i in 0..n {
                    kkt[(n + k, i)] = row[i];
                    kkt[(i, n + k)] = row[i];
                }
                rhs[n + k] = eq_rhs[k];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let v: Vec<f64> = (0..n).map(|i| sol[i]).collect();
            if !v.iter().all(|x| x.is_finite()) || !feasible(p, &v, 1e-9) {
                continue;
            }
            let f = objective(p, &v);
            if best.as_ref().is_none_or(|(_, b)| f < *b) {
                best = Some((v, f));
            }
        }
    }
    best
}

pub fn min_eigenvalue(q: &Array2<f64>) -> f64 {
    let n = q.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| q[[i, j]]);
    m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Calls `visit` with every point of the 0.01 grid (as integer hundredths)
/// inside the box `center ± radius`, clipped to the problem's bounds.
fn for_each_grid_point(p: &QpProblem, center: &[f64], radius: f64, mut visit: impl FnMut(&[i64])) {
    let n = center.len();
    let ranges: Vec<(i64, i64)> = (0..n)
        .map(|i| {
            let lo = ((center[i] - radius) * 100.0).ceil().max((p.lower[i] * 100.0).round()) as i64;
            let hi = ((center[i] + radius) * 100.0).floor().min((p.upper[i] * 100.0).round()) as i64;
            (lo, hi)
        })
        .collect();
    if ranges.iter().any(|(lo, hi)| lo > hi) {
        return;
    }
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        visit(&k);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            if k[i] < ranges[i].1 {
                k[i] += 1;
                break;
            }
            k[i] = ranges[i].0;
            i += 1;
        }
    }
}

/// Minimum of the objective over every feasible point of the 0.01 grid on
/// the box, with the rows checked in exact integer arithmetic. The rows
/// must have integer coefficients.
///
/// The search is exhaustive without visiting the whole box: if some
/// feasible grid point has value `f* + Δ`, every grid point at least as good
/// lies within `√(2Δ/λ_min)` of the exact minimizer `x*` (strong convexity
/// plus first-order optimality), so only that window is visited.
pub fn grid_oracle(p: &QpProblem, x_star: &[f64], f_star: f64) -> f64 {
    let n = p.dim();
    let rows: Vec<Vec<i64>> = (0..p.ineq_rhs.len())
        .map(|k| {
            (0..n)
                .map(|i| {
                    let a = p.ineq_rows[[k, i]];
                    assert_eq!(a, a.round(), "grid oracle needs integer rows");
                    a as i64
                })
                .collect()
        })
        .collect();
    let rhs: Vec<i64> = p.ineq_rhs.iter().map(|b| (b * 100.0).round() as i64).collect();
    let mut best = f64::INFINITY;
    let scan = |radius: f64, best: &mut f64| {
        let mut v = vec![0.0; n];
        for_each_grid_point(p, x_star, radius, |k| {
            let ok = rows
                .iter()
                .zip(&rhs)
                .all(|(a, &b)| a.iter().zip(k).map(|(ai, ki)| ai * ki).sum::<i64>() <= b);
            if ok {
                for i in 0..n {
                    v[i] = k[i] as f64 / 100.0;
                }
                *best = best.min(objective(p, &v));
            }
        });
    };
    let mut r0 = 0.03;
    while best == f64::INFINITY {
        scan(r0, &mut best);
        r0 *= 2.0;
        assert!(r0 < 100.0, "no feasible grid point near the optimum");
    }
    let lambda = min_eigenvalue(&p.q_matrix);
    assert!(lambda > 0.0, "grid oracle needs a strongly convex objective");
    let radius = (2.0 * (best - f_star).max(0.0) / lambda).sqrt() + 0.01;
    scan(radius, &mut best);
    best
}

/// A random strongly convex instance on `[0, 30]^p` with up to `r` rows of
/// ±1 coefficients on disjoint supports and right-hand sides on the 0.01
/// grid. Such rows are always jointly feasible, and each face holds grid
/// points.
pub fn random_grid_instance(rng: &mut ChaCha8Rng, p: usize, r: usize) -> QpProblem {
    let m = Array2::from_shape_simple_fn((p, p), || rng.sample::<f64, _>(StandardNormal));
    let q = m.t().dot(&m) / (4.0 * p as f64) + Array2::<f64>::eye(p) * 0.25;
    let q = (&q + &q.t()) * 0.5;
    let x_u = Array1::from_shape_simple_fn(p, || rng.random_range(-5.0..35.0));
    let c = -q.dot(&x_u);
    let r = r.min(p);
    let mut order: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut rows = Array2::zeros((r, p));
    let mut rhs = Array1::zeros(r);
    for k in 0..r {
        let support: Vec<usize> = order.iter().copied().skip(k).step_by(r).collect();
        for &i in &support {
            rows[[k, i]] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let clipped: f64 = support.iter().map(|&i| rows[[k, i]] * x_u[i].clamp(0.0, 30.0)).sum();
        let lowest: f64 = support.iter().map(|&i| if rows[[k, i]] < 0.0 { -30.0 } else { 0.0 }).sum();
        let b = (clipped - rng.random_range(0.0..8.0)).max(lowest + 0.5);
        rhs[k] = (b * 100.0).round() / 100.0;
    }
    QpProblem::new(q, c, Array1::zeros(p), Array1::from_elem(p, 30.0), rows, rhs).unwrap()
}
