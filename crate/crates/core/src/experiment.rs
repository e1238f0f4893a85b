//! End-to-end runs over (seed × method × mode): build data, pick a
//! bandwidth, weight, calibrate, predict, evaluate, write files.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, QuantileRule, RunConfig};
use crate::conformal::{
    argmax_classes, build_records, calibrate_global, calibrate_mondrian, calibrate_tibshirani, predict_all,
    score_from_probs, CalibrationMode, Calibrator, ConformalError,
};
use crate::data::{
    centroid_distance_split, ingest_features_csv, make_gaussian_shift, random_test_split, split_train_cal,
    DataError, FeatureTable, SplitMode, SplitSpec, SyntheticShiftSpec,
};
use crate::digits::{fmt_real, to_json_sig17};
use crate::evaluation::{
    aggregate, build_report, empirical_coverage, write_aggregate_csv, CoverageCurve, EvalError, ExperimentReport,
    ReportInputs,
};
use crate::kernel::{gram_blocks, select_bandwidth, KernelContext, KernelError};
use crate::weighting::{
    classifier_ratio_weights, kde_ratio_weights, solve_kmm, two_stage_skmm_in, uniform_weights, LogisticFit,
    SkmmJoint, WeightError, WeightMethod, WeightSet,
};

/// Newton budget for the synthetic-data predictor.
const PREDICTOR_BUDGET: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Setup(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Calibration and test tables for one seed, both labeled and carrying
/// class probabilities.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub cal: FeatureTable,
    pub test: FeatureTable,
    /// Synthetic only: test row was drawn from the source component.
    pub test_in_source_component: Option<Vec<bool>>,
}

fn attach_predictions(train: &FeatureTable, tables: [FeatureTable; 2], reg: f64) -> Result<[FeatureTable; 2], RunError> {
    let labels = train.labels().ok_or(DataError::Unlabeled)?;
    if labels.iter().any(|&l| l > 1) {
        return Err(RunError::Setup(
            "without probability columns the built-in predictor needs binary labels".into(),
        ));
    }
    let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let fit = LogisticFit::fit(train.features().view(), &y, reg, PREDICTOR_BUDGET)?;
    let [a, b] = tables;
    let with = |t: FeatureTable| -> Result<FeatureTable, RunError> {
        let p = fit.predict_proba_all(t.features().view());
        let probs = Array2::from_shape_fn((t.n_rows(), 2), |(i, k)| if k == 1 { p[i] } else { 1.0 - p[i] });
        Ok(t.with_class_probs(probs)?)
    };
    Ok([with(a)?, with(b)?])
}

pub fn build_seed_data(cfg: &RunConfig, seed: u64) -> Result<SeedData, RunError> {
    let split = SplitSpec {
        calibration_fraction: cfg.calibration_fraction,
        test_fraction: cfg.test_fraction,
        mode: cfg.split_mode,
        seed,
    };
    match &cfg.data {
        DataSource::Synthetic(s) => {
            let g = make_gaussian_shift(&SyntheticShiftSpec {
                dim: s.dim,
                n_source: s.n_source,
                n_target: s.n_target,
                overlap: s.overlap,
                separation: s.separation,
                label_rule: s.label_rule,
                seed,
            })?;
            let (train, cal) = split_train_cal(&g.source, &split)?;
            let [cal, test] = attach_predictions(&train, [cal, g.target], cfg.predictor_reg)?;
            Ok(SeedData {
                cal,
                test,
                test_in_source_component: Some(g.target_in_source_component),
            })
        }
        DataSource::Csv(c) => {
            let labeled = ingest_features_csv(&c.labeled, true, c.n_prob_cols)?;
            let (pool, test) = match &c.test {
                Some(path) => (labeled, ingest_features_csv(path, true, c.n_prob_cols)?),
                None => match cfg.split_mode {
                    SplitMode::CentroidDistance => centroid_distance_split(&labeled, cfg.test_fraction)?,
                    SplitMode::Random => random_test_split(&labeled, cfg.test_fraction, seed)?,
                },
            };
            if pool.dim() != test.dim() {
                return Err(RunError::Setup(format!(
                    "test table has {} features, labeled table {}",
                    test.dim(),
                    pool.dim()
                )));
            }
            let (train, cal) = split_train_cal(&pool, &split)?;
            let [cal, test] = if c.n_prob_cols == 0 {
                attach_predictions(&train, [cal, test], cfg.predictor_reg)?
            } else {
                [cal, test]
            };
            if cal.n_classes() != test.n_classes() {
                return Err(RunError::Setup("calibration and test class counts differ".into()));
            }
            Ok(SeedData {
                cal,
                test,
                test_in_source_component: None,
            })
        }
    }
}

/// Data plus the kernel context shared by every method of a seed.
#[derive(Debug, Clone)]
pub struct SeedState {
    pub seed: u64,
    pub data: SeedData,
    pub kernel: KernelContext,
}

pub fn prepare_seed(cfg: &RunConfig, seed: u64) -> Result<SeedState, RunError> {
    let data = build_seed_data(cfg, seed)?;
    let (cal, test) = (data.cal.features().view(), data.test.features().view());
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => select_bandwidth(cal, test, cfg.n_permutations, seed)?,
    };
    let kernel = gram_blocks(cal, test, sigma)?;
    Ok(SeedState { seed, data, kernel })
}

/// One method's weights together with what its reports need to know.
#[derive(Debug, Clone)]
pub struct MethodWeights {
    pub weights: WeightSet,
    /// Test rows the method's coverage is evaluated on.
    pub evaluated_rows: Vec<usize>,
    pub joint: Option<SkmmJoint>,
    pub notes: BTreeMap<String, String>,
}

pub fn compute_weights(cfg: &RunConfig, state: &SeedState, method: WeightMethod) -> Result<MethodWeights, RunError> {
    let (cal, test) = (state.data.cal.features().view(), state.data.test.features().view());
    let n = state.data.cal.n_rows();
    let m = state.data.test.n_rows();
    let mut notes = BTreeMap::new();
    let mut joint = None;
    let mut evaluated_rows: Vec<usize> = (0..m).collect();
    let weights = match method {
        WeightMethod::Uniform => {
            let mut w = uniform_weights(n)?;
            w.attach_mmd(&state.kernel)?;
            w
        }
        WeightMethod::Kde => {
            let mut w = kde_ratio_weights(cal, test, cfg.kde_holdout_fraction, state.seed)?;
            w.attach_mmd(&state.kernel)?;
            w
        }
        WeightMethod::Classifier => {
            let mut w = classifier_ratio_weights(cal, test, cfg.classifier_reg)?;
            w.attach_mmd(&state.kernel)?;
            w
        }
        WeightMethod::Kmm => solve_kmm(&state.kernel, &cfg.kmm)?,
        WeightMethod::Skmm => {
            let (w, j) = two_stage_skmm_in(&state.kernel, state.data.test.ids(), &cfg.kmm)?;
            let index: HashMap<&str, usize> = state
                .data
                .test
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            evaluated_rows = w
                .selected_target_ids
                .as_ref()
                .expect("skmm selects targets")
                .iter()
                .map(|id| index[id.as_str()])
                .collect();
            notes.insert("skmm.mmd_full_target".into(), fmt_real(w.mmd_against(&state.kernel)?));
            notes.insert("skmm.stage1_iterations".into(), j.solution.iterations.to_string());
            notes.insert("skmm.stage1_converged".into(), j.solution.converged.to_string());
            joint = Some(j);
            w
        }
    };
    notes.insert("kernel.sigma_selected".into(), fmt_real(state.kernel.sigma()));
    if matches!(method, WeightMethod::Kmm | WeightMethod::Skmm) {
        notes.insert("kmm.epsilon_effective".into(), fmt_real(cfg.kmm.epsilon_for(n)));
    }
    if let Some(s) = &weights.solver {
        notes.insert("solver.iterations".into(), s.iterations.to_string());
        notes.insert("solver.converged".into(), s.converged.to_string());
    }
    Ok(MethodWeights {
        weights,
        evaluated_rows,
        joint,
        notes,
    })
}

/// Per-level calibrators for one (method, mode).
pub fn calibrators(
    cfg: &RunConfig,
    cal: &FeatureTable,
    weights: &WeightSet,
    mode: CalibrationMode,
) -> Result<Vec<Calibrator>, RunError> {
    let probs = cal.class_probs().ok_or(ConformalError::MissingProbs)?;
    let labels = cal.labels().ok_or(DataError::Unlabeled)?;
    let scores = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| score_from_probs(probs.row(i), y))
        .collect::<Result<Vec<f64>, _>>()?;
    let raw = weights.raw.to_vec();
    let records = build_records(cal.ids(), &scores, labels, &raw)?;
    let per_level = |level: f64| -> Result<Calibrator, ConformalError> {
        match (cfg.rule, mode) {
            (QuantileRule::Standard, CalibrationMode::Global) => calibrate_global(&records, level),
            (QuantileRule::Standard, CalibrationMode::Mondrian) => calibrate_mondrian(&records, level, &raw),
            (QuantileRule::Tibshirani, mode) => calibrate_tibshirani(&records, level, &raw, mode),
        }
    };
    Ok(cfg.levels.iter().map(|&l| per_level(l)).collect::<Result<_, _>>()?)
}

/// Coverage curve over the evaluated test rows.
pub fn coverage_curve(
    cfg: &RunConfig,
    state: &SeedState,
    mw: &MethodWeights,
    mode: CalibrationMode,
) -> Result<CoverageCurve, RunError> {
    let test = state.data.test.select(&mw.evaluated_rows);
    let labels = test.labels().ok_or(DataError::Unlabeled)?;
    let predicted = argmax_classes(test.class_probs().ok_or(ConformalError::MissingProbs)?);
    let mut empirical = Vec::with_capacity(cfg.levels.len());
    for c in calibrators(cfg, &state.data.cal, &mw.weights, mode)? {
        let sets = predict_all(&test, &c, &predicted)?;
        empirical.push(empirical_coverage(&sets, labels)?);
    }
    Ok(CoverageCurve::new(cfg.levels.clone(), empirical, test.n_rows())?)
}

fn snapshot(cfg: &RunConfig, notes: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut out = cfg.to_pairs();
    // Neither may leak into a report, or adding a seed or moving the
    // output would change every file.
    out.remove("seeds");
    out.remove("output.dir");
    out.extend(notes.iter().map(|(k, v)| (k.clone(), v.clone())));
    out
}

pub fn evaluate(
    cfg: &RunConfig,
    state: &SeedState,
    mw: &MethodWeights,
    mode: CalibrationMode,
) -> Result<ExperimentReport, RunError> {
    let curve = coverage_curve(cfg, state, mw, mode)?;
    let m = state.data.test.n_rows();
    Ok(build_report(ReportInputs {
        method: mw.weights.method,
        mode,
        curve,
        ess: mw.weights.ess,
        mmd: mw.weights.mmd.expect("mmd attached for every method"),
        retained_fraction: mw.evaluated_rows.len() as f64 / m as f64,
        seed: state.seed,
        delta: cfg.delta,
        config: snapshot(cfg, &mw.notes),
    })?)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct RunKey {
    pub method: WeightMethod,
    pub mode: CalibrationMode,
    pub seed: u64,
}

impl RunKey {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_seed{}", self.method.as_str(), self.mode.as_str(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    #[serde(flatten)]
    pub key: RunKey,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub reports: Vec<ExperimentReport>,
    pub failures: Vec<RunFailure>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn run_seed(cfg: &RunConfig, seed: u64) -> Vec<(RunKey, Result<ExperimentReport, String>)> {
    let keys = |method| cfg.modes.iter().map(move |&mode| RunKey { method, mode, seed });
    let state = match prepare_seed(cfg, seed) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .methods
                .iter()
                .flat_map(|&m| keys(m))
                .map(|k| (k, Err(msg.clone())))
                .collect();
        }
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        match compute_weights(cfg, &state, method) {
            Err(e) => out.extend(keys(method).map(|k| (k, Err(e.to_string())))),
            Ok(mw) => {
                for k in keys(method) {
                    let r = evaluate(cfg, &state, &mw, k.mode).map_err(|e| e.to_string());
                    out.push((k, r));
                }
            }
        }
    }
    out
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Setup(e.to_string()))
}

/// Runs every (seed, method, mode) in memory. Seeds run in parallel on
/// `jobs` threads; results come back in (method, mode, seed) order
/// whatever the schedule.
pub fn run_experiment(cfg: &RunConfig, jobs: usize) -> Result<RunSummary, RunError> {
    let per_seed: Vec<_> = pool(jobs)?.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect());
    let mut all: Vec<_> = per_seed.into_iter().flatten().collect();
    all.sort_by(|a, b| a.0.cmp(&b.0));
    let mut summary = RunSummary::default();
    for (key, r) in all {
        match r {
            Ok(rep) => summary.reports.push(rep),
            Err(error) => summary.failures.push(RunFailure { key, error }),
        }
    }
    Ok(summary)
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// Writes `reports/*.json`, `aggregate.csv` and, when anything failed,
/// `failures.json`.
pub fn write_run_outputs(cfg: &RunConfig, summary: &RunSummary, out: &Path) -> Result<(), RunError> {
    let dir = out.join("reports");
    create_dir(&dir)?;
    for r in &summary.reports {
        let key = RunKey {
            method: r.method,
            mode: r.mode,
            seed: r.seed,
        };
        let mut json = r.to_json()?;
        json.push('\n');
        write_file(&dir.join(format!("{}.json", key.file_stem())), &json)?;
    }
    let agg = out.join("aggregate.csv");
    write_aggregate_csv(&agg, &aggregate(&cfg.dataset, &summary.reports)?).map_err(|e| match e {
        EvalError::Io(source) => RunError::Io { path: agg.clone(), source },
        other => other.into(),
    })?;
    let manifest = out.join("failures.json");
    if summary.failures.is_empty() {
        if manifest.exists() {
            std::fs::remove_file(&manifest).map_err(io_err(&manifest))?;
        }
    } else {
        let mut json = to_json_sig17(&summary.failures).map_err(EvalError::from)?;
        json.push('\n');
        write_file(&manifest, &json)?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunSummary, RunError> {
    let summary = run_experiment(cfg, jobs)?;
    write_run_outputs(cfg, &summary, out)?;
    Ok(summary)
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<(), RunError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let go = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    };
    go().map_err(io_err(path))
}

/// Writes `weights/{method}_seed{seed}.csv` (and an α file for skmm);
/// returns the failures.
pub fn write_weights(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<RunFailure>, RunError> {
    let dir = out.join("weights");
    create_dir(&dir)?;
    let mode = cfg.modes[0];
    type SeedWeights = Result<(SeedState, Vec<(WeightMethod, Result<MethodWeights, String>)>), String>;
    let results: Vec<SeedWeights> = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let state = prepare_seed(cfg, seed).map_err(|e| e.to_string())?;
                let per_method = cfg
                    .methods
                    .iter()
                    .map(|&m| (m, compute_weights(cfg, &state, m).map_err(|e| e.to_string())))
                    .collect();
                Ok((state, per_method))
            })
            .collect()
    });
    let mut failures = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        let key = |method| RunKey { method, mode, seed };
        let (state, per_method) = match r {
            Ok(v) => v,
            Err(error) => {
                failures.extend(cfg.methods.iter().map(|&m| RunFailure {
                    key: key(m),
                    error: error.clone(),
                }));
                continue;
            }
        };
        for (method, r) in per_method {
            let mw = match r {
                Ok(mw) => mw,
                Err(error) => {
                    failures.push(RunFailure { key: key(method), error });
                    continue;
                }
            };
            let ids = state.data.cal.ids();
            let w = &mw.weights;
            write_lines(
                &dir.join(format!("{}_seed{}.csv", method.as_str(), seed)),
                "id,raw,normalized",
                (0..ids.len()).map(|i| format!("{},{},{}", ids[i], fmt_real(w.raw[i]), fmt_real(w.normalized[i]))),
            )?;
            if let Some(alpha) = &w.alpha {
                let tids = state.data.test.ids();
                let mut kept = vec![false; tids.len()];
                mw.evaluated_rows.iter().for_each(|&j| kept[j] = true);
                write_lines(
                    &dir.join(format!("skmm_alpha_seed{seed}.csv")),
                    "id,alpha,selected",
                    (0..tids.len()).map(|j| format!("{},{},{}", tids[j], fmt_real(alpha[j]), u8::from(kept[j]))),
                )?;
            }
        }
    }
    failures.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(failures)
}

/// Writes `curve.csv` in long form, one row per (method, mode, seed, level).
pub fn write_curves(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunSummary, RunError> {
    create_dir(out)?;
    let summary = run_experiment(cfg, jobs)?;
    let lines = summary.reports.iter().flat_map(|r| {
        r.curve.levels.iter().zip(&r.curve.empirical).map(move |(l, c)| {
            format!(
                "{},{},{},{},{},{},{}",
                cfg.dataset,
                r.method.as_str(),
                r.mode.as_str(),
                r.seed,
                fmt_real(*l),
                fmt_real(*c),
                r.curve.n_evaluated
            )
        })
    });
    write_lines(
        &out.join("curve.csv"),
        "dataset,method,mode,seed,level,coverage,n_evaluated",
        lines,
    )?;
    Ok(summary)
}
