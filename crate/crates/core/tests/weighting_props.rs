use ndarray::{array, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::data::{make_gaussian_shift, LabelRule, SyntheticShiftSpec};
use shiftcal::kernel::{gram_blocks, mmd_squared_weighted};
use shiftcal::weighting::{
    classifier_ratio_weights, kde_ratio_weights, solve_kmm, solve_skmm_joint, two_stage_skmm, uniform_weights,
    KmmConfig, WeightSet,
};

fn shifted(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize, shift: f64) -> (Array2<f64>, Array2<f64>) {
    let cal = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let test = Array2::from_shape_simple_fn((m, d), || shift + rng.sample::<f64, _>(StandardNormal));
    (cal, test)
}

fn check_kmm_constraints(ws: &WeightSet, cfg: &KmmConfig) {
    let n = ws.n();
    assert!(ws.raw.iter().all(|&w| (0.0..=cfg.b_bound + 1e-6).contains(&w)));
    let mass = ws.raw.sum() / n as f64;
    assert!((mass - 1.0).abs() <= cfg.epsilon_for(n) + 1e-6, "mass {mass}");
    assert!(ws.ess >= 1.0 && ws.ess <= n as f64);
}

#[test]
fn kmm_weights_are_feasible_and_beat_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let cfg = KmmConfig::default();
    for trial in 0..8 {
        let (cal, test) = shifted(&mut rng, 40 + 10 * trial, 30, 2, 0.3 * trial as f64);
        let ctx = gram_blocks(cal.view(), test.view(), 1.0).unwrap();
        let ws = solve_kmm(&ctx, &cfg).unwrap();
        check_kmm_constraints(&ws, &cfg);
        let ones_t = Array1::ones(test.nrows());
        let solved = mmd_squared_weighted(&ctx, ws.raw.view(), ones_t.view()).unwrap();
        let uniform = mmd_squared_weighted(&ctx, Array1::ones(cal.nrows()).view(), ones_t.view()).unwrap();
        assert!(solved <= uniform + 1e-8, "trial {trial}: {solved} > {uniform}");
    }
}

#[test]
fn skmm_weights_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = KmmConfig::default();
    for trial in 0..4 {
        let (cal, test) = shifted(&mut rng, 60, 40, 2, 1.5 * trial as f64);
        let table = shiftcal::data::FeatureTable::from_features("t", test).unwrap();
        let ws = two_stage_skmm(cal.view(), &table, &cfg, 1.0).unwrap();
        check_kmm_constraints(&ws, &cfg);
        let kept = ws.selected_target_ids.as_ref().unwrap().len();
        assert!(kept >= 2);
    }
}

#[test]
fn ess_bounds_hold_for_every_method() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (cal, test) = shifted(&mut rng, 50, 40, 3, 2.0);
    let ctx = gram_blocks(cal.view(), test.view(), 1.0).unwrap();
    let table = shiftcal::data::FeatureTable::from_features("t", test.clone()).unwrap();
    let all = [
        uniform_weights(50).unwrap(),
        kde_ratio_weights(cal.view(), test.view(), 0.2, 1).unwrap(),
        classifier_ratio_weights(cal.view(), test.view(), 1.0).unwrap(),
        solve_kmm(&ctx, &KmmConfig::default()).unwrap(),
        two_stage_skmm(cal.view(), &table, &KmmConfig::default(), 1.0).unwrap(),
    ];
    for ws in &all {
        assert!(ws.ess >= 1.0 && ws.ess <= 50.0, "{:?}: ess {}", ws.method, ws.ess);
        assert!((ws.normalized.sum() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn permuting_calibration_rows_permutes_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    // Few, well-spread points keep the kernel block well conditioned, so
    // the QP minimizer is pinned down tightly.
    let (cal, test) = shifted(&mut rng, 10, 8, 2, 1.0);
    let cal = cal * 2.0;
    let mut perm: Vec<usize> = (0..10).collect();
    perm.shuffle(&mut rng);
    let cal_p = cal.select(Axis(0), &perm);

    let exact = |a: &Array1<f64>, b: &Array1<f64>| perm.iter().enumerate().all(|(k, &i)| b[k] == a[i]);
    let kde = (
        kde_ratio_weights(cal.view(), test.view(), 0.2, 5).unwrap().raw,
        kde_ratio_weights(cal_p.view(), test.view(), 0.2, 5).unwrap().raw,
    );
    assert!(exact(&kde.0, &kde.1));
    let clf = (
        classifier_ratio_weights(cal.view(), test.view(), 1.0).unwrap().raw,
        classifier_ratio_weights(cal_p.view(), test.view(), 1.0).unwrap().raw,
    );
    assert!(exact(&clf.0, &clf.1));
    assert!(exact(&uniform_weights(10).unwrap().raw, &uniform_weights(10).unwrap().raw));

    let cfg = KmmConfig {
        tol: Some(1e-13),
        max_iter: 500_000,
        ..KmmConfig::default()
    };
    let close = |a: &Array1<f64>, b: &Array1<f64>| {
        perm.iter().enumerate().map(|(k, &i)| (b[k] - a[i]).abs()).fold(0.0, f64::max)
    };
    let kmm_a = solve_kmm(&gram_blocks(cal.view(), test.view(), 1.5).unwrap(), &cfg).unwrap();
    let kmm_b = solve_kmm(&gram_blocks(cal_p.view(), test.view(), 1.5).unwrap(), &cfg).unwrap();
    assert!(close(&kmm_a.raw, &kmm_b.raw) <= 1e-5, "kmm gap {}", close(&kmm_a.raw, &kmm_b.raw));
    let ta = shiftcal::data::FeatureTable::from_features("t", test.clone()).unwrap();
    let sk_a = two_stage_skmm(cal.view(), &ta, &cfg, 1.5).unwrap();
    let sk_b = two_stage_skmm(cal_p.view(), &ta, &cfg, 1.5).unwrap();
    assert_eq!(sk_a.selected_target_ids, sk_b.selected_target_ids);
    assert!(close(&sk_a.raw, &sk_b.raw) <= 1e-5, "skmm gap {}", close(&sk_a.raw, &sk_b.raw));
}

#[test]
fn single_pair_matches_one_dimensional_scan() {
    // n = m = 1 with x = 0, z = 1: the objective is w² − 2w·k(x, z) on
    // [1 − ε, 1 + ε], minimized at max(1 − ε, k(x, z)).
    let ctx = gram_blocks(array![[0.0]].view(), array![[1.0]].view(), 1.0).unwrap();
    for eps in [0.2, 0.5, 0.9] {
        let cfg = KmmConfig {
            epsilon: Some(eps),
            ..KmmConfig::default()
        };
        let ws = solve_kmm(&ctx, &cfg).unwrap();
        let kxz = (-0.5f64).exp();
        let mut best = (f64::INFINITY, 0.0);
        let steps = (2.0 * eps / 1e-4).round() as i64;
        for s in 0..=steps {
            let w = 1.0 - eps + s as f64 * 1e-4;
            let f = w * w - 2.0 * w * kxz;
            if f < best.0 {
                best = (f, w);
            }
        }
        assert!((ws.raw[0] - best.1).abs() <= 1e-4, "eps {eps}: {} vs grid {}", ws.raw[0], best.1);
        assert!((ws.raw[0] - (1.0 - eps).max(kxz)).abs() <= 1e-6);
    }
}

#[test]
fn joint_selection_drops_the_far_target() {
    // Source {0}, targets {0, 10}: grid over (w, α_near, α_far) at 0.01.
    let ctx = gram_blocks(array![[0.0]].view(), array![[0.0], [10.0]].view(), 1.0).unwrap();
    let cfg = KmmConfig {
        epsilon: Some(0.05),
        tau: 0.5,
        ..KmmConfig::default()
    };
    let joint = solve_skmm_joint(&ctx, &cfg).unwrap();
    let k_far = (-50.0f64).exp();
    let objective = |w: f64, a: f64, b: f64| {
        w * w - w * (a + b * k_far) + 0.25 * (a * a + b * b + 2.0 * a * b * k_far)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for a in 0..=100 {
        for b in 0..=100 {
            let (af, bf) = (a as f64 / 100.0, b as f64 / 100.0);
            if (af + bf) / 2.0 < 0.5 - 1e-12 {
                continue;
            }
            for w in 0..=200 {
                let wf = w as f64 / 100.0;
                if (wf - (af + bf) / 2.0).abs() > 0.05 + 1e-12 {
                    continue;
                }
                let f = objective(wf, af, bf);
                if f < best.0 {
                    best = (f, wf, af, bf);
                }
            }
        }
    }
    let (near, far) = (joint.alpha[0], joint.alpha[1]);
    assert!(far <= 0.2 && near >= 0.8, "alpha = ({near}, {far})");
    assert!(joint.solution.objective <= best.0 + 1e-9);
    assert!((joint.solution.objective - best.0).abs() <= 1e-3);
    assert!((near - best.2).abs() <= 0.02 && (far - best.3).abs() <= 0.02);
}

#[test]
fn full_overlap_retains_most_targets_and_matches_kmm() {
    let data = make_gaussian_shift(&SyntheticShiftSpec {
        dim: 2,
        n_source: 300,
        n_target: 300,
        overlap: 1.0,
        separation: 0.0,
        label_rule: LabelRule::LinearLogit,
        seed: 4,
    })
    .unwrap();
    let cfg = KmmConfig::default();
    let (cal, test) = (data.source.features().view(), data.target.features().view());
    let sk = two_stage_skmm(cal, &data.target, &cfg, 1.0).unwrap();
    let kmm = solve_kmm(&gram_blocks(cal, test, 1.0).unwrap(), &cfg).unwrap();
    let kept = sk.selected_target_ids.as_ref().unwrap().len() as f64 / 300.0;
    assert!(kept >= 0.9, "retained {kept}");
    let gap = (&sk.normalized - &kmm.normalized).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(gap <= 0.05);
}

#[test]
fn classifier_on_identical_draws_keeps_ess_near_n() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let (cal, test) = shifted(&mut rng, 400, 400, 2, 0.0);
        let ws = classifier_ratio_weights(cal.view(), test.view(), 1.0).unwrap();
        ratios.push(ws.ess / 400.0);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean >= 0.9, "mean ESS/n {mean}");
}

#[test]
fn kde_on_identical_samples_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (cal, _) = shifted(&mut rng, 30, 1, 2, 0.0);
    let ws = kde_ratio_weights(cal.view(), cal.view(), 0.2, 0).unwrap();
    assert!(ws.raw.iter().all(|&w| w == 1.0));
    assert!((ws.ess - 30.0).abs() <= 1e-9);
}
