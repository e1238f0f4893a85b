//! Convex quadratic programs with box bounds and a few linear inequalities:
//!
//! ```text
//! minimize ½ vᵀQv + cᵀv   subject to   lower ≤ v ≤ upper,  A v ≤ b
//! ```
//!
//! The solver is a monotone accelerated projected-gradient method with
//! adaptive restarts. Every iterate is projected exactly onto the feasible
//! polytope; the projection solves the `r`-dimensional dual of the
//! Euclidean projection by projected Newton steps, which is cheap because `r`
//! is tiny (at most three rows in this crate). The schedule depends only on
//! the inputs, so identical problems give bit-identical solutions.

use ndarray::{Array1, Array2};

use crate::linalg::{dot, matvec, norm_inf, solve_small};

pub const DEFAULT_MAX_ITER: usize = 50_000;
/// Relative diagonal jitter `δ = JITTER · trace(Q) / p`.
pub const JITTER: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
const CURVATURE_TOL: f64 = 1e-8;
const POWER_ITERATIONS: usize = 50;
const NEWTON_ITERATIONS: usize = 200;
const MULTIPLIER_LIMIT: f64 = 1e13;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QpError {
    #[error("{what} has shape {found:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("q_matrix is not symmetric: |Q[{i}][{j}] - Q[{j}][{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("lower[{0}] exceeds upper[{0}]")]
    BoundsCrossed(usize),
    #[error("feasible region is empty")]
    Infeasible,
    #[error("q_matrix is not PSD: curvature {0} along an iterate direction")]
    NotPsd(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q_matrix: Array2<f64>,
    pub linear: Array1<f64>,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
    /// `A`, one constraint per row.
    pub ineq_rows: Array2<f64>,
    /// `b`.
    pub ineq_rhs: Array1<f64>,
}

impl QpProblem {
    pub fn new(
        q_matrix: Array2<f64>,
        linear: Array1<f64>,
        lower: Array1<f64>,
        upper: Array1<f64>,
        ineq_rows: Array2<f64>,
        ineq_rhs: Array1<f64>,
    ) -> Result<Self, QpError> {
        let p = linear.len();
        let shape = |what, expected: (usize, usize), found: (usize, usize)| {
            if expected == found {
                Ok(())
            } else {
                Err(QpError::Shape {
                    what,
                    expected,
                    found,
                })
            }
        };
        shape("q_matrix", (p, p), q_matrix.dim())?;
        shape("lower", (p, 1), (lower.len(), 1))?;
        shape("upper", (p, 1), (upper.len(), 1))?;
        let r = ineq_rhs.len();
        shape("ineq_rows", (r, p), ineq_rows.dim())?;
        if !q_matrix.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("q_matrix"));
        }
        if !linear.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("linear"));
        }
        if !ineq_rows.iter().chain(ineq_rhs.iter()).all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("inequality rows"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        for i in 0..p {
            if lower[i] > upper[i] {
                return Err(QpError::BoundsCrossed(i));
            }
            for j in (i + 1)..p {
                let gap = (q_matrix[[i, j]] - q_matrix[[j, i]]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(QpError::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(Self {
            q_matrix: q_matrix.as_standard_layout().into_owned(),
            linear,
            lower,
            upper,
            ineq_rows,
            ineq_rhs,
        })
    }

    /// A problem with no inequality rows.
    pub fn boxed(
        q_matrix: Array2<f64>,
        linear: Array1<f64>,
        lower: Array1<f64>,
        upper: Array1<f64>,
    ) -> Result<Self, QpError> {
        let p = linear.len();
        Self::new(
            q_matrix,
            linear,
            lower,
            upper,
            Array2::zeros((0, p)),
            Array1::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, v: &Array1<f64>) -> f64 {
        0.5 * v.dot(&self.q_matrix.dot(v)) + self.linear.dot(v)
    }

    /// Largest violation of any bound or row at `v`.
    pub fn max_violation(&self, v: &Array1<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..v.len() {
            worst = worst.max(self.lower[i] - v[i]).max(v[i] - self.upper[i]);
        }
        for (row, &b) in self.ineq_rows.rows().into_iter().zip(self.ineq_rhs.iter()) {
            worst = worst.max(row.dot(v) - b);
        }
        worst
    }

    /// Feasibility tolerance `1e-6 · (1 + ‖b‖∞)`.
    pub fn feasibility_tol(&self) -> f64 {
        1e-6 * (1.0 + self.ineq_rhs.iter().fold(0.0f64, |m, b| m.max(b.abs())))
    }
}

/// `1e-7 · (1 + ‖c‖∞)`.
pub fn default_tol(problem: &QpProblem) -> f64 {
    1e-7 * (1.0 + norm_inf(problem.linear.as_slice().expect("contiguous")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: Array1<f64>,
    pub objective: f64,
    /// ∞-norm of the gradient mapping at `v`.
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
    pub iterations: usize,
    pub converged: bool,
    /// One multiplier per inequality row, from the final projection.
    pub row_multipliers: Array1<f64>,
}

/// The feasible polytope with rows rescaled to unit norm.
struct Polytope<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    origin: Vec<usize>,
    norms: Vec<f64>,
    n_rows: usize,
    tol: f64,
}

enum Projection {
    Done,
    Unbounded,
    Stalled,
}

impl<'a> Polytope<'a> {
    fn new(problem: &'a QpProblem) -> Result<Self, QpError> {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut origin = Vec::new();
        let mut norms = Vec::new();
        for (k, row) in problem.ineq_rows.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            let b = problem.ineq_rhs[k];
            if norm == 0.0 {
                if b < 0.0 {
                    return Err(QpError::Infeasible);
                }
                continue;
            }
            rows.push(row.iter().map(|a| a / norm).collect());
            rhs.push(b / norm);
            origin.push(k);
            norms.push(norm);
        }
        let bmax = rhs.iter().fold(0.0f64, |m: f64, b: &f64| m.max(b.abs()));
        Ok(Self {
            lower: problem.lower.as_slice().expect("contiguous"),
            upper: problem.upper.as_slice().expect("contiguous"),
            rows,
            rhs,
            origin,
            norms,
            n_rows: problem.ineq_rhs.len(),
            tol: 1e-12 * (1.0 + bmax),
        })
    }

    fn r(&self) -> usize {
        self.rows.len()
    }

    /// `x = clip(y − Aᵀλ)`; returns the dual value and `A x − b`.
    fn evaluate(&self, y: &[f64], lam: &[f64], x: &mut [f64], free: &mut [bool]) -> (f64, Vec<f64>) {
        let r = self.r();
        let mut dist = 0.0;
        for i in 0..y.len() {
            let mut s = y[i];
            for k in 0..r {
                s -= self.rows[k][i] * lam[k];
            }
            let c = s.clamp(self.lower[i], self.upper[i]);
            free[i] = s > self.lower[i] && s < self.upper[i];
            x[i] = c;
            dist += (c - y[i]) * (c - y[i]);
        }
        let resid: Vec<f64> = (0..r).map(|k| dot(&self.rows[k], x) - self.rhs[k]).collect();
        let phi = 0.5 * dist + lam.iter().zip(&resid).map(|(l, g)| l * g).sum::<f64>();
        (phi, resid)
    }

    fn stationary(&self, lam: &[f64], resid: &[f64]) -> bool {
        lam.iter().zip(resid).all(|(&l, &g)| {
            let pg = if l > 0.0 { g } else { g.max(0.0) };
            pg.abs() <= self.tol
        })
    }

    /// Euclidean projection of `y` into `x`, warm-started from `lam`.
    fn project(&self, y: &[f64], lam: &mut [f64], x: &mut [f64], free: &mut [bool]) -> Projection {
        let r = self.r();
        if r == 0 {
            for i in 0..y.len() {
                x[i] = y[i].clamp(self.lower[i], self.upper[i]);
            }
            return Projection::Done;
        }
        let mut trial = vec![0.0; r];
        for _ in 0..NEWTON_ITERATIONS {
            let (phi, resid) = self.evaluate(y, lam, x, free);
            if self.stationary(lam, &resid) {
                return Projection::Done;
            }
            if lam.iter().any(|&l| l > MULTIPLIER_LIMIT) {
                return Projection::Unbounded;
            }
            let moving: Vec<usize> = (0..r).filter(|&k| lam[k] > 0.0 || resid[k] > 0.0).collect();
            let mut h = vec![vec![0.0; moving.len()]; moving.len()];
            for (a, &ka) in moving.iter().enumerate() {
                for (b, &kb) in moving.iter().enumerate().skip(a) {
                    let s: f64 = (0..y.len())
                        .filter(|&i| free[i])
                        .map(|i| self.rows[ka][i] * self.rows[kb][i])
                        .sum();
                    h[a][b] = s;
                    h[b][a] = s;
                }
                h[a][a] += 1e-12;
            }
            let rhs: Vec<f64> = moving.iter().map(|&k| resid[k]).collect();
            let step = solve_small(h, rhs.clone()).unwrap_or(rhs);
            let mut direction = vec![0.0; r];
            for (a, &k) in moving.iter().enumerate() {
                direction[k] = step[a];
            }

            let mut accepted = false;
            let mut s = 1.0;
            for _ in 0..80 {
                for k in 0..r {
                    trial[k] = (lam[k] + s * direction[k]).max(0.0);
                }
                let ascent: f64 = (0..r).map(|k| resid[k] * (trial[k] - lam[k])).sum();
                if ascent > 0.0 {
                    let (phi_trial, _) = self.evaluate(y, &trial, x, free);
                    if phi_trial >= phi + 1e-4 * ascent {
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                // The dual gradient is 1-Lipschitz in each unit row, so a
                // 1/r step always ascends.
                for k in 0..r {
                    trial[k] = (lam[k] + resid[k] / r as f64).max(0.0);
                }
                if trial.iter().zip(lam.iter()).all(|(a, b)| a == b) {
                    self.evaluate(y, lam, x, free);
                    return Projection::Stalled;
                }
            }
            lam.copy_from_slice(&trial);
        }
        let (_, resid) = self.evaluate(y, lam, x, free);
        if self.stationary(lam, &resid) {
            Projection::Done
        } else {
            Projection::Stalled
        }
    }

    /// Multipliers in the caller's row scaling, given the projection step.
    fn multipliers(&self, lam: &[f64], step_scale: f64) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_rows);
        for k in 0..self.r() {
            out[self.origin[k]] = lam[k] * step_scale / self.norms[k];
        }
        out
    }
}

/// Operator `v ↦ (Q + δI) v`.
struct Hessian<'a> {
    q: &'a Array2<f64>,
    jitter: f64,
}

impl Hessian<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        matvec(self.q, v, out);
        if self.jitter != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += self.jitter * x;
            }
        }
    }

    /// Power-iteration estimate of the largest eigenvalue.
    fn spectral_bound(&self, p: usize) -> Result<f64, QpError> {
        let mut v: Vec<f64> = (0..p).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut w = vec![0.0; p];
        let mut estimate = 0.0;
        for _ in 0..POWER_ITERATIONS {
            self.apply(&v, &mut w);
            let rayleigh = dot(&v, &w);
            if rayleigh < -CURVATURE_TOL {
                return Err(QpError::NotPsd(rayleigh));
            }
            let norm = dot(&w, &w).sqrt();
            if norm == 0.0 {
                return Ok(0.0);
            }
            estimate = norm;
            v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / norm);
        }
        Ok(estimate)
    }
}

fn objective_from(qv: &[f64], v: &[f64], c: &[f64]) -> f64 {
    0.5 * dot(v, qv) + dot(c, v)
}

/// Solves from the origin clipped into the box.
pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let start = Array1::from_iter(
        (0..problem.dim()).map(|i| 0.0f64.clamp(problem.lower[i], problem.upper[i])),
    );
    run(problem, &start, tol, max_iter, None)
}

/// Solves from `start` (projected onto the feasible set first).
pub fn solve_from(
    problem: &QpProblem,
    start: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution, QpError> {
    run(problem, start, tol, max_iter, None)
}

/// Like [`solve`], also returning the objective the solver minimizes (with
/// jitter) after every iteration.
pub fn solve_traced(
    problem: &QpProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(QpSolution, Vec<f64>), QpError> {
    let start = Array1::from_iter(
        (0..problem.dim()).map(|i| 0.0f64.clamp(problem.lower[i], problem.upper[i])),
    );
    let mut trace = Vec::new();
    let sol = run(problem, &start, tol, max_iter, Some(&mut trace))?;
    Ok((sol, trace))
}

fn run(
    problem: &QpProblem,
    start: &Array1<f64>,
    tol: f64,
    max_iter: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<QpSolution, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::BadTolerance(tol));
    }
    let p = problem.dim();
    if start.len() != p {
        return Err(QpError::Shape {
            what: "start",
            expected: (p, 1),
            found: (start.len(), 1),
        });
    }
    let poly = Polytope::new(problem)?;
    let c = problem.linear.as_slice().expect("contiguous");
    let trace_q: f64 = problem.q_matrix.diag().sum();
    let hess = Hessian {
        q: &problem.q_matrix,
        jitter: if p > 0 { JITTER * trace_q.max(0.0) / p as f64 } else { 0.0 },
    };

    let mut free = vec![false; p];
    let mut lam_step = vec![0.0; poly.r()];
    let mut lam_check = vec![0.0; poly.r()];

    // Feasibility pre-pass.
    let mut x = vec![0.0; p];
    match poly.project(start.as_slice().expect("contiguous"), &mut lam_step, &mut x, &mut free) {
        Projection::Unbounded => return Err(QpError::Infeasible),
        Projection::Stalled | Projection::Done => {}
    }
    let x_arr = Array1::from(x.clone());
    if problem.max_violation(&x_arr) > problem.feasibility_tol() {
        return Err(QpError::Infeasible);
    }

    let mut lipschitz = hess.spectral_bound(p)? * 1.01;
    if lipschitz <= 0.0 {
        lipschitz = 1e-12 * (1.0 + norm_inf(c));
    }

    let mut qx = vec![0.0; p];
    hess.apply(&x, &mut qx);
    let mut fx = objective_from(&qx, &x, c);
    let mut y = x.clone();
    let mut qy = qx.clone();
    let mut fy = fx;
    let mut t = 1.0f64;

    let mut z = vec![0.0; p];
    let mut qz = vec![0.0; p];
    let mut buf = vec![0.0; p];
    let mut probe = vec![0.0; p];

    // Gradient mapping ‖L (x − P(x − ∇f/L))‖∞ and the row multipliers.
    let stationarity = |x: &[f64],
                        qx: &[f64],
                        l: f64,
                        lam: &mut [f64],
                        buf: &mut [f64],
                        probe: &mut [f64],
                        free: &mut [bool]|
     -> (f64, Array1<f64>) {
        for i in 0..p {
            buf[i] = x[i] - (qx[i] + c[i]) / l;
        }
        poly.project(buf, lam, probe, free);
        let g = (0..p).fold(0.0f64, |m, i| m.max((l * (x[i] - probe[i])).abs()));
        (g, poly.multipliers(lam, l))
    };

    let (mut kkt, mut multipliers) =
        stationarity(&x, &qx, lipschitz, &mut lam_check, &mut buf, &mut probe, &mut free);
    let mut converged = kkt <= tol;
    let mut iterations = 0;

    while !converged && iterations < max_iter {
        iterations += 1;
        let fz = loop {
            for i in 0..p {
                buf[i] = y[i] - (qy[i] + c[i]) / lipschitz;
            }
            poly.project(&buf, &mut lam_step, &mut z, &mut free);
            hess.apply(&z, &mut qz);
            let fz = objective_from(&qz, &z, c);
            let mut d2 = 0.0;
            let mut curvature = 0.0;
            let mut lin = 0.0;
            for i in 0..p {
                let d = z[i] - y[i];
                d2 += d * d;
                curvature += d * (qz[i] - qy[i]);
                lin += (qy[i] + c[i]) * d;
            }
            if curvature < -CURVATURE_TOL * d2.max(f64::MIN_POSITIVE) {
                return Err(QpError::NotPsd(curvature / d2));
            }
            let model = fy + lin + 0.5 * lipschitz * d2;
            if fz <= model + 1e-12 * (1.0 + fy.abs()) {
                break fz;
            }
            lipschitz *= 2.0;
        };

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // f(z) − f(x) from the step itself; near the optimum the two
        // objective values agree to rounding and comparing them stalls.
        // Both points sit on active rows only to the projection tolerance,
        // and a normal offset of that size moves the change by up to
        // 2·tol·‖∇f‖, so that much increase still counts as descent.
        let improved = {
            let mut delta = 0.0;
            let mut grad2 = 0.0;
            for i in 0..p {
                let d = z[i] - x[i];
                let g = qx[i] + c[i];
                delta += d * (g + 0.5 * (qz[i] - qx[i]));
                grad2 += g * g;
            }
            delta <= 2.0 * poly.tol * grad2.sqrt()
        };
        let momentum_ok = {
            let mut s = 0.0;
            for i in 0..p {
                s += (y[i] - z[i]) * (z[i] - x[i]);
            }
            s <= 0.0
        };
        if improved && momentum_ok {
            let beta = (t - 1.0) / t_next;
            for i in 0..p {
                let yi = z[i] + beta * (z[i] - x[i]);
                let qyi = qz[i] + beta * (qz[i] - qx[i]);
                y[i] = yi;
                qy[i] = qyi;
            }
            std::mem::swap(&mut x, &mut z);
            std::mem::swap(&mut qx, &mut qz);
            fx = fz;
            fy = objective_from(&qy, &y, c);
            t = t_next;
        } else {
            if improved {
                std::mem::swap(&mut x, &mut z);
                std::mem::swap(&mut qx, &mut qz);
                fx = fz;
            }
            y.copy_from_slice(&x);
            qy.copy_from_slice(&qx);
            fy = fx;
            t = 1.0;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(fx);
        }
        let (g, mult) =
            stationarity(&x, &qx, lipschitz, &mut lam_check, &mut buf, &mut probe, &mut free);
        kkt = g;
        multipliers = mult;
        converged = kkt <= tol;
    }

    let v = Array1::from(x);
    Ok(QpSolution {
        objective: problem.objective(&v),
        kkt_feasibility: problem.max_violation(&v).max(0.0),
        kkt_stationarity: kkt,
        iterations,
        converged,
        row_multipliers: multipliers,
        v,
    })
}
