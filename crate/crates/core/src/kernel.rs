//! RBF kernel, Gram blocks, bandwidth selection and weighted MMD².
//!
//! The kernel is `k(x, y) = exp(-‖x − y‖² / (2σ²))`. Bandwidth candidates are
//! multiples of the median source-target distance; the chosen one maximizes
//! the permutation z-score of the biased (V-statistic) MMD².

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{seeded, stream};

/// Multipliers of the median distance tried by [`select_bandwidth`].
pub const BANDWIDTH_MULTIPLIERS: [f64; 5] = [0.01, 0.1, 0.5, 1.0, 2.0];
/// Above this many cross pairs, [`median_distance`] subsamples.
pub const MEDIAN_PAIR_CAP: usize = 1_000_000;
pub const DEFAULT_PERMUTATIONS: usize = 100;
/// Negative MMD² above this magnitude means the Gram blocks are corrupt.
pub const MMD_NEGATIVE_TOL: f64 = 1e-12;
const ZSCORE_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("MMD² evaluated to {0}; kernel context is not PSD")]
    NegativeMmd(f64),
}

fn check_sigma(sigma: f64) -> Result<(), KernelError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(KernelError::BadBandwidth(sigma))
    }
}

fn sq_dist(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, sigma: f64) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch(x.len(), y.len()));
    }
    check_sigma(sigma)?;
    Ok((-sq_dist(x, y) / (2.0 * sigma * sigma)).exp())
}

fn cross_gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for (i, mut row) in k.axis_iter_mut(Axis(0)).enumerate() {
        let x = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (sq_dist(x, b.row(j)) * scale).exp();
        }
    }
    k
}

/// Symmetric Gram matrix, unit diagonal, mirrored so symmetry is exact.
fn self_gram(a: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let scale = -1.0 / (2.0 * sigma * sigma);
    let n = a.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = (sq_dist(a.row(i), a.row(j)) * scale).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Bandwidth plus the three Gram blocks for one source/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    sigma: f64,
    k_ss: Array2<f64>,
    k_st: Array2<f64>,
    k_tt: Array2<f64>,
}

impl KernelContext {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn k_ss(&self) -> &Array2<f64> {
        &self.k_ss
    }
    pub fn k_st(&self) -> &Array2<f64> {
        &self.k_st
    }
    pub fn k_tt(&self) -> &Array2<f64> {
        &self.k_tt
    }
    pub fn n_source(&self) -> usize {
        self.k_ss.nrows()
    }
    pub fn n_target(&self) -> usize {
        self.k_tt.nrows()
    }

    /// The context for the target rows at `indices`; entries are copied, not
    /// recomputed, so values match a fresh [`gram_blocks`] bit for bit.
    pub fn restrict_targets(&self, indices: &[usize]) -> KernelContext {
        KernelContext {
            sigma: self.sigma,
            k_ss: self.k_ss.clone(),
            k_st: self.k_st.select(Axis(1), indices),
            k_tt: self.k_tt.select(Axis(0), indices).select(Axis(1), indices),
        }
    }
}

pub fn gram_blocks(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<KernelContext, KernelError> {
    if source.ncols() != target.ncols() {
        return Err(KernelError::DimensionMismatch(source.ncols(), target.ncols()));
    }
    check_sigma(sigma)?;
    Ok(KernelContext {
        sigma,
        k_ss: self_gram(source, sigma),
        k_st: cross_gram(source, target, sigma),
        k_tt: self_gram(target, sigma),
    })
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median Euclidean distance over source × target pairs.
///
/// With more than `cap` pairs, `cap` pairs are drawn with a fixed seed. A zero
/// median (coincident samples) returns 1.0.
pub fn median_distance(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, cap: usize) -> f64 {
    let (n, m) = (source.nrows(), target.nrows());
    let mut dists: Vec<f64> = if n.saturating_mul(m) > cap {
        let mut rng = seeded(0, stream::PAIR_SUBSAMPLE);
        (0..cap.max(1))
            .map(|_| {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..m);
                sq_dist(source.row(i), target.row(j)).sqrt()
            })
            .collect()
    } else {
        let mut d = Vec::with_capacity(n * m);
        for x in source.rows() {
            for z in target.rows() {
                d.push(sq_dist(x, z).sqrt());
            }
        }
        d
    };
    if dists.is_empty() {
        return 1.0;
    }
    let med = median_in_place(&mut dists);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// One bandwidth candidate's two-sample statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthScore {
    pub sigma: f64,
    pub observed: f64,
    pub perm_mean: f64,
    pub perm_std: f64,
    pub z_score: f64,
}

/// `sᵀKs` over the upper triangle of the symmetric `k`.
fn signed_quadratic(k: &Array2<f64>, s: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, row) in k.axis_iter(Axis(0)).enumerate() {
        let row = row.as_slice().expect("standard layout");
        let tail: f64 = row[i + 1..]
            .iter()
            .zip(&s[i + 1..])
            .map(|(kij, sj)| kij * sj)
            .sum();
        total += s[i] * (s[i] * row[i] + 2.0 * tail);
    }
    total.max(0.0)
}

/// Permutation-standardized MMD² for every candidate in
/// [`BANDWIDTH_MULTIPLIERS`]. The same permutations are reused across
/// candidates.
pub fn bandwidth_scores(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<BandwidthScore>, KernelError> {
    if source.ncols() != target.ncols() {
        return Err(KernelError::DimensionMismatch(source.ncols(), target.ncols()));
    }
    for found in [source.nrows(), target.nrows()] {
        if found < 2 {
            return Err(KernelError::TooFewPoints { needed: 2, found });
        }
    }
    let (n, m) = (source.nrows(), target.nrows());
    let median = median_distance(source, target, MEDIAN_PAIR_CAP);
    let pooled = ndarray::concatenate(Axis(0), &[source, target]).expect("same width");
    let total = n + m;
    let mut d2 = Array2::<f64>::zeros((total, total));
    for i in 0..total {
        for j in (i + 1)..total {
            let v = sq_dist(pooled.row(i), pooled.row(j));
            d2[[i, j]] = v;
            d2[[j, i]] = v;
        }
    }

    let signs = |first: &[usize]| {
        let mut s = vec![-1.0 / m as f64; total];
        for &i in first {
            s[i] = 1.0 / n as f64;
        }
        s
    };
    let observed_signs = signs(&(0..n).collect::<Vec<_>>());
    let mut rng = seeded(seed, stream::PERMUTATIONS);
    let mut order: Vec<usize> = (0..total).collect();
    let permuted: Vec<Vec<f64>> = (0..n_permutations)
        .map(|_| {
            order.shuffle(&mut rng);
            signs(&order[..n])
        })
        .collect();

    let mut scores = Vec::with_capacity(BANDWIDTH_MULTIPLIERS.len());
    let mut k = Array2::<f64>::zeros((total, total));
    for c in BANDWIDTH_MULTIPLIERS {
        let sigma = c * median;
        let scale = -1.0 / (2.0 * sigma * sigma);
        ndarray::Zip::from(&mut k)
            .and(&d2)
            .for_each(|kij, &dij| *kij = (dij * scale).exp());
        let observed = signed_quadratic(&k, &observed_signs);
        let stats: Vec<f64> = permuted.iter().map(|s| signed_quadratic(&k, s)).collect();
        let (perm_mean, perm_std) = mean_std(&stats);
        let z_score = (observed - perm_mean) / perm_std.max(ZSCORE_STD_FLOOR);
        scores.push(BandwidthScore {
            sigma,
            observed,
            perm_mean,
            perm_std,
            z_score,
        });
    }
    Ok(scores)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

/// The candidate with the largest z-score, ties to the larger bandwidth.
///
/// If every candidate observes zero discrepancy, no z-score carries signal
/// and the largest bandwidth is returned.
pub fn pick_bandwidth(scores: &[BandwidthScore]) -> f64 {
    let largest = scores
        .iter()
        .map(|s| s.sigma)
        .fold(f64::NEG_INFINITY, f64::max);
    if scores.iter().all(|s| s.observed <= MMD_NEGATIVE_TOL) {
        return largest;
    }
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.z_score > best.z_score || (s.z_score == best.z_score && s.sigma > best.sigma) {
            best = s;
        }
    }
    best.sigma
}

pub fn select_bandwidth(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    n_permutations: usize,
    seed: u64,
) -> Result<f64, KernelError> {
    Ok(pick_bandwidth(&bandwidth_scores(
        source,
        target,
        n_permutations,
        seed,
    )?))
}

/// `(1/n²)wᵀK_SS w − (2/(nm))wᵀK_ST a + (1/m²)aᵀK_TT a`, clamped at zero.
pub fn mmd_squared_weighted(
    ctx: &KernelContext,
    w: ArrayView1<'_, f64>,
    a: ArrayView1<'_, f64>,
) -> Result<f64, KernelError> {
    let (n, m) = (ctx.n_source(), ctx.n_target());
    if w.len() != n {
        return Err(KernelError::LengthMismatch {
            what: "source weights",
            expected: n,
            found: w.len(),
        });
    }
    if a.len() != m {
        return Err(KernelError::LengthMismatch {
            what: "target weights",
            expected: m,
            found: a.len(),
        });
    }
    let (nf, mf) = (n as f64, m as f64);
    let ss = w.dot(&ctx.k_ss.dot(&w)) / (nf * nf);
    let st = w.dot(&ctx.k_st.dot(&a)) / (nf * mf);
    let tt = a.dot(&ctx.k_tt.dot(&a)) / (mf * mf);
    let v = ss - 2.0 * st + tt;
    if v < -MMD_NEGATIVE_TOL {
        return Err(KernelError::NegativeMmd(v));
    }
    Ok(v.max(0.0))
}

/// Unweighted MMD² between `source` and `target` at bandwidth `sigma`.
pub fn mmd_squared(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<f64, KernelError> {
    let ctx = gram_blocks(source, target, sigma)?;
    mmd_squared_weighted(
        &ctx,
        Array1::ones(ctx.n_source()).view(),
        Array1::ones(ctx.n_target()).view(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn rbf_closed_forms() {
        let x = array![0.0, 0.0];
        assert_eq!(rbf(x.view(), x.view(), 0.3).unwrap(), 1.0);
        let y = array![3.0, 4.0];
        assert_abs_diff_eq!(rbf(x.view(), y.view(), 5.0).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        let far = rbf(array![0.0].view(), array![100.0].view(), 1.0).unwrap();
        assert!(far >= 0.0 && far < 1e-300 && !far.is_nan());
    }

    #[test]
    fn rbf_errors() {
        assert_eq!(
            rbf(array![0.0].view(), array![0.0, 1.0].view(), 1.0),
            Err(KernelError::DimensionMismatch(1, 2))
        );
        assert_eq!(
            rbf(array![0.0].view(), array![0.0].view(), 0.0),
            Err(KernelError::BadBandwidth(0.0))
        );
    }

    #[test]
    fn gram_blocks_small_cases() {
        let one = array![[0.5, -1.0]];
        let ctx = gram_blocks(one.view(), one.view(), 0.7).unwrap();
        assert_eq!(ctx.k_ss(), &array![[1.0]]);
        assert_eq!(ctx.k_st(), &array![[1.0]]);
        assert_eq!(ctx.k_tt(), &array![[1.0]]);

        let two = array![[0.0], [1.0]];
        let ctx = gram_blocks(two.view(), array![[2.0]].view(), 1.0).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(ctx.k_ss(), &array![[1.0, e], [e, 1.0]]);

        let same = gram_blocks(two.view(), two.view(), 1.0).unwrap();
        assert_eq!(same.k_ss(), same.k_tt());
        assert_eq!(same.k_ss(), same.k_st());
    }

    #[test]
    fn median_distance_cases() {
        let med = median_distance(array![[0.0]].view(), array![[1.0], [2.0], [3.0]].view(), 100);
        assert_eq!(med, 2.0);
        let p = array![[4.0, 4.0], [4.0, 4.0]];
        assert_eq!(median_distance(p.view(), p.view(), 100), 1.0);
        let even = median_distance(array![[0.0]].view(), array![[1.0], [2.0], [3.0], [4.0]].view(), 100);
        assert_eq!(even, 2.5);
    }

    #[test]
    fn median_distance_subsamples_above_cap() {
        let a = Array2::from_shape_fn((50, 1), |(i, _)| i as f64);
        let b = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 + 0.5);
        let exact = median_distance(a.view(), b.view(), MEDIAN_PAIR_CAP);
        let approx = median_distance(a.view(), b.view(), 1000);
        assert!((exact - approx).abs() < 2.0, "{exact} vs {approx}");
        assert_eq!(approx, median_distance(a.view(), b.view(), 1000));
    }

    #[test]
    fn mmd_closed_forms() {
        let ctx = gram_blocks(array![[0.0]].view(), array![[0.0]].view(), 1.0).unwrap();
        let one = array![1.0];
        assert_eq!(mmd_squared_weighted(&ctx, one.view(), one.view()).unwrap(), 0.0);

        let ctx = gram_blocks(array![[0.0]].view(), array![[1.0]].view(), 1.0).unwrap();
        assert_abs_diff_eq!(
            mmd_squared_weighted(&ctx, one.view(), one.view()).unwrap(),
            2.0 * (1.0 - (-0.5f64).exp()),
            epsilon = 1e-15
        );

        let ctx = gram_blocks(array![[0.0], [1.0]].view(), array![[0.0]].view(), 1.0).unwrap();
        let v = mmd_squared_weighted(&ctx, array![2.0, 0.0].view(), one.view()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mmd_length_checks() {
        let ctx = gram_blocks(array![[0.0]].view(), array![[0.0]].view(), 1.0).unwrap();
        assert!(matches!(
            mmd_squared_weighted(&ctx, Array1::ones(2).view(), Array1::ones(1).view()),
            Err(KernelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn identical_samples_select_largest_bandwidth() {
        let s = Array2::from_shape_fn((12, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let med = median_distance(s.view(), s.view(), MEDIAN_PAIR_CAP);
        let sigma = select_bandwidth(s.view(), s.view(), 30, 1).unwrap();
        assert_eq!(sigma, 2.0 * med);
    }

    #[test]
    fn bandwidth_needs_two_points() {
        let one = array![[0.0]];
        let two = array![[0.0], [1.0]];
        assert_eq!(
            select_bandwidth(one.view(), two.view(), 10, 0),
            Err(KernelError::TooFewPoints { needed: 2, found: 1 })
        );
    }

    #[test]
    fn restrict_targets_matches_fresh_blocks() {
        let s = array![[0.0], [0.4], [2.0]];
        let t = array![[1.0], [-1.0], [3.0], [0.2]];
        let ctx = gram_blocks(s.view(), t.view(), 0.8).unwrap();
        let idx = [3, 1];
        let fresh = gram_blocks(s.view(), t.select(Axis(0), &idx).view(), 0.8).unwrap();
        assert_eq!(ctx.restrict_targets(&idx), fresh);
    }
}
