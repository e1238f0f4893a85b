use ndarray::{s, Array1, Array2, ArrayView2};

use super::{check_samples, KmmConfig, SolverStats, WeightError, WeightMethod, WeightSet};
use crate::data::FeatureTable;
use crate::kernel::{gram_blocks, KernelContext};
use crate::qp::{self, QpProblem, QpSolution};

fn stats(sol: &QpSolution) -> SolverStats {
    SolverStats {
        iterations: sol.iterations,
        converged: sol.converged,
        objective: sol.objective,
        kkt_stationarity: sol.kkt_stationarity,
        kkt_feasibility: sol.kkt_feasibility,
    }
}

fn run(problem: &QpProblem, start: Array1<f64>, cfg: &KmmConfig) -> Result<QpSolution, WeightError> {
    let tol = cfg.tol.unwrap_or_else(|| qp::default_tol(problem));
    Ok(qp::solve_from(problem, &start, tol, cfg.max_iter)?)
}

/// The KMM program over `w ∈ [0, B]ⁿ` with `|Σw/n − 1| ≤ ε`, scaled so that
/// the objective plus `1ᵀK_TT1/m²` is the MMD².
pub fn kmm_problem(ctx: &KernelContext, b_bound: f64, epsilon: f64) -> Result<QpProblem, WeightError> {
    let (n, m) = (ctx.n_source(), ctx.n_target());
    let (nf, mf) = (n as f64, m as f64);
    let q = ctx.k_ss() * (2.0 / (nf * nf));
    let c = ctx.k_st().sum_axis(ndarray::Axis(1)) * (-2.0 / (nf * mf));
    let mut rows = Array2::zeros((2, n));
    rows.row_mut(0).fill(1.0 / nf);
    rows.row_mut(1).fill(-1.0 / nf);
    Ok(QpProblem::new(
        q,
        c,
        Array1::zeros(n),
        Array1::from_elem(n, b_bound),
        rows,
        ndarray::array![1.0 + epsilon, -(1.0 - epsilon)],
    )?)
}

pub fn solve_kmm(ctx: &KernelContext, cfg: &KmmConfig) -> Result<WeightSet, WeightError> {
    cfg.validate()?;
    let n = ctx.n_source();
    let problem = kmm_problem(ctx, cfg.b_bound, cfg.epsilon_for(n))?;
    let sol = run(&problem, Array1::from_elem(n, 1.0f64.min(cfg.b_bound)), cfg)?;
    // The solver may land a hair outside the box.
    let raw = sol.v.mapv(|w| w.clamp(0.0, cfg.b_bound));
    let mut ws = WeightSet::from_raw(raw, WeightMethod::Kmm)?;
    ws.solver = Some(stats(&sol));
    ws.attach_mmd(ctx)?;
    Ok(ws)
}

/// Stage-one output of selective KMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SkmmJoint {
    pub w: Array1<f64>,
    pub alpha: Array1<f64>,
    pub solution: QpSolution,
    pub problem: QpProblem,
}

/// The joint program in `(w, α)` with `|Σw/n − Σα/m| ≤ ε` and `Σα/m ≥ τ`.
pub fn skmm_problem(ctx: &KernelContext, cfg: &KmmConfig) -> Result<QpProblem, WeightError> {
    let (n, m) = (ctx.n_source(), ctx.n_target());
    let (nf, mf) = (n as f64, m as f64);
    let p = n + m;
    let mut q = Array2::zeros((p, p));
    q.slice_mut(s![..n, ..n]).assign(&(ctx.k_ss() * (2.0 / (nf * nf))));
    let cross = ctx.k_st() * (-2.0 / (nf * mf));
    q.slice_mut(s![..n, n..]).assign(&cross);
    q.slice_mut(s![n.., ..n]).assign(&cross.t());
    q.slice_mut(s![n.., n..]).assign(&(ctx.k_tt() * (2.0 / (mf * mf))));

    let mut upper = Array1::ones(p);
    upper.slice_mut(s![..n]).fill(cfg.b_bound);
    let mut rows = Array2::zeros((3, p));
    rows.slice_mut(s![0, ..n]).fill(1.0 / nf);
    rows.slice_mut(s![0, n..]).fill(-1.0 / mf);
    rows.slice_mut(s![1, ..n]).fill(-1.0 / nf);
    rows.slice_mut(s![1, n..]).fill(1.0 / mf);
    rows.slice_mut(s![2, n..]).fill(-1.0 / mf);
    let eps = cfg.epsilon_for(n);
    Ok(QpProblem::new(
        q,
        Array1::zeros(p),
        Array1::zeros(p),
        upper,
        rows,
        ndarray::array![eps, eps, -cfg.tau],
    )?)
}

pub fn solve_skmm_joint(ctx: &KernelContext, cfg: &KmmConfig) -> Result<SkmmJoint, WeightError> {
    cfg.validate()?;
    let n = ctx.n_source();
    let problem = skmm_problem(ctx, cfg)?;
    let mut start = Array1::ones(problem.dim());
    start.slice_mut(s![..n]).fill(1.0f64.min(cfg.b_bound));
    let solution = run(&problem, start, cfg)?;
    let w = solution.v.slice(s![..n]).mapv(|w| w.clamp(0.0, cfg.b_bound));
    let alpha = solution.v.slice(s![n..]).mapv(|a| a.clamp(0.0, 1.0));
    Ok(SkmmJoint {
        w,
        alpha,
        solution,
        problem,
    })
}

/// Targets with `α ≥ threshold`; when fewer than two pass, the `⌈τm⌉`
/// largest α instead (ties to the lower index). Returned ascending.
pub fn select_targets(alpha: &Array1<f64>, threshold: f64, tau: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..alpha.len()).filter(|&j| alpha[j] >= threshold).collect();
    if kept.len() >= 2 {
        return kept;
    }
    let k = ((tau * alpha.len() as f64).ceil() as usize).clamp(1, alpha.len());
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// Selective KMM on a precomputed context: joint solve, threshold α, then
/// plain KMM against the retained targets only.
pub fn two_stage_skmm_in(
    ctx: &KernelContext,
    target_ids: &[String],
    cfg: &KmmConfig,
) -> Result<(WeightSet, SkmmJoint), WeightError> {
    if target_ids.len() != ctx.n_target() {
        return Err(WeightError::BadConfig(format!(
            "{} target ids for {} targets",
            target_ids.len(),
            ctx.n_target()
        )));
    }
    let joint = solve_skmm_joint(ctx, cfg)?;
    let keep = select_targets(&joint.alpha, cfg.alpha_threshold, cfg.tau);
    let sub = ctx.restrict_targets(&keep);
    let mut ws = solve_kmm(&sub, cfg)?;
    ws.method = WeightMethod::Skmm;
    ws.alpha = Some(joint.alpha.clone());
    ws.selected_target_ids = Some(keep.iter().map(|&j| target_ids[j].clone()).collect());
    Ok((ws, joint))
}

pub fn two_stage_skmm(
    cal: ArrayView2<'_, f64>,
    test: &FeatureTable,
    cfg: &KmmConfig,
    sigma: f64,
) -> Result<WeightSet, WeightError> {
    check_samples(cal, test.features().view())?;
    let ctx = gram_blocks(cal, test.features().view(), sigma)?;
    Ok(two_stage_skmm_in(&ctx, test.ids(), cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(eps: f64) -> KmmConfig {
        KmmConfig {
            epsilon: Some(eps),
            tol: Some(1e-10),
            ..KmmConfig::default()
        }
    }

    #[test]
    fn two_point_closed_form() {
        let ctx = gram_blocks(array![[0.0], [1.0]].view(), array![[0.0]].view(), 1.0).unwrap();
        let w = solve_kmm(&ctx, &cfg(0.1)).unwrap();
        assert!((w.raw[0] - 2.0).abs() < 1e-3, "{:?}", w.raw);
        assert!(w.raw[1].abs() < 1e-3);
        assert!(w.mmd.unwrap().powi(2) <= 1e-6);
    }

    #[test]
    fn identical_samples_stay_uniform() {
        let x = array![[0.0, 1.0], [1.0, 0.5], [-0.3, 0.2], [2.0, -1.0]];
        let ctx = gram_blocks(x.view(), x.view(), 1.0).unwrap();
        let w = solve_kmm(&ctx, &cfg(0.2)).unwrap();
        assert!(w.mmd.unwrap() <= 1e-5);
        let (ws, joint) = two_stage_skmm_in(
            &ctx,
            &["a".into(), "b".into(), "c".into(), "d".into()],
            &cfg(0.2),
        )
        .unwrap();
        assert!(joint.solution.objective <= 1e-10);
        assert_eq!(ws.selected_target_ids.unwrap().len(), 4);
    }

    #[test]
    fn far_target_is_deselected() {
        let ctx = gram_blocks(array![[0.0]].view(), array![[0.0], [10.0]].view(), 1.0).unwrap();
        let joint = solve_skmm_joint(&ctx, &cfg(0.05)).unwrap();
        assert!(joint.alpha[1] <= 0.2, "{:?}", joint.alpha);
        assert!(joint.alpha[0] >= 0.8, "{:?}", joint.alpha);
    }

    #[test]
    fn fallback_selection() {
        assert_eq!(select_targets(&array![0.9, 0.1, 0.5], 0.2, 0.5), vec![0, 2]);
        assert_eq!(select_targets(&array![0.9, 0.1, 0.05, 0.15], 0.2, 0.5), vec![0, 3]);
        assert_eq!(select_targets(&array![0.1, 0.1, 0.1], 0.2, 0.5), vec![0, 1]);
    }
}
