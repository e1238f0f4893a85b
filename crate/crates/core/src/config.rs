//! Run configuration: flat `key = value` lines with dotted namespaces.
//!
//! ```text
//! # shifted synthetic benchmark
//! data.source = synthetic
//! synthetic.overlap = 0.3
//! synthetic.separation = 4
//! methods = uniform,kmm,skmm
//! seeds = 0,1,2
//! ```
//!
//! Lines starting with `#` are comments. Unknown or repeated keys are
//! errors, as are keys that do not apply to the chosen data source.
//! Relative paths are taken relative to the working directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::conformal::CalibrationMode;
use crate::data::{LabelRule, SplitMode};
use crate::evaluation::{default_levels, extended_levels, DEFAULT_DELTA};
use crate::kernel::DEFAULT_PERMUTATIONS;
use crate::qp::DEFAULT_MAX_ITER;
use crate::weighting::{KmmConfig, WeightMethod};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: key `{key}` does not apply when data.source = {source_kind}")]
    NotApplicable {
        key: String,
        line: usize,
        source_kind: String,
    },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key `{key}`: `{value}` is not one of {allowed}")]
    BadEnum {
        key: String,
        value: String,
        allowed: String,
    },
    #[error("key `{key}`: file {path} does not exist")]
    MissingFile { key: String, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub overlap: f64,
    pub separation: f64,
    pub label_rule: LabelRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvConfig {
    /// Labeled table the calibration (and possibly test) rows come from.
    pub labeled: PathBuf,
    /// Separate labeled test table; when absent the test rows are split off
    /// `labeled` by `split.mode`.
    pub test: Option<PathBuf>,
    pub n_prob_cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(CsvConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileRule {
    Standard,
    Tibshirani,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data: DataSource,
    pub calibration_fraction: f64,
    pub test_fraction: f64,
    pub split_mode: SplitMode,
    pub methods: Vec<WeightMethod>,
    pub modes: Vec<CalibrationMode>,
    pub levels: Vec<f64>,
    pub kmm: KmmConfig,
    pub n_permutations: usize,
    /// Fixed RBF bandwidth; selected per seed when absent.
    pub sigma: Option<f64>,
    pub kde_holdout_fraction: f64,
    pub classifier_reg: f64,
    pub predictor_reg: f64,
    pub delta: f64,
    pub rule: QuantileRule,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

const COMMON_KEYS: &[&str] = &[
    "data.source",
    "dataset.name",
    "split.calibration_fraction",
    "split.test_fraction",
    "split.mode",
    "methods",
    "modes",
    "levels",
    "levels.preset",
    "seeds",
    "output.dir",
    "kmm.b_bound",
    "kmm.epsilon",
    "kmm.tau",
    "kmm.alpha_threshold",
    "kernel.n_permutations",
    "kernel.sigma",
    "kde.holdout_fraction",
    "classifier.reg",
    "predictor.reg",
    "qp.tol",
    "qp.max_iter",
    "eval.delta",
    "conformal.rule",
];
const SYNTHETIC_KEYS: &[&str] = &[
    "synthetic.dim",
    "synthetic.n_source",
    "synthetic.n_target",
    "synthetic.overlap",
    "synthetic.separation",
    "synthetic.label_rule",
];
const CSV_KEYS: &[&str] = &["csv.labeled", "csv.test", "csv.n_prob_cols"];

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn take(&mut self, key: &'static str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn parsed<T: FromStr>(&mut self, key: &'static str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, _)) => v.parse().map(Some).map_err(|_| ConfigError::Type {
                key: key.to_string(),
                value: v,
                expected,
            }),
        }
    }

    fn real(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parsed::<f64>(key, "a real number")?.unwrap_or(default);
        if !v.is_finite() {
            return Err(ConfigError::Type {
                key: key.into(),
                value: v.to_string(),
                expected: "a finite real number",
            });
        }
        Ok(v)
    }

    fn count(&mut self, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parsed(key, "a non-negative integer")?.unwrap_or(default))
    }

    fn choice<T: Copy>(
        &mut self,
        key: &'static str,
        parse: impl Fn(&str) -> Option<T>,
        allowed: &[&str],
        default: T,
    ) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, _)) => parse(&v).ok_or_else(|| ConfigError::BadEnum {
                key: key.into(),
                value: v,
                allowed: allowed.join(", "),
            }),
        }
    }

    fn list<T>(
        &mut self,
        key: &'static str,
        parse: impl Fn(&str) -> Result<T, ConfigError>,
    ) -> Result<Option<Vec<T>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, _)) => v
                .split(',')
                .map(|s| parse(s.trim()))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

fn split_mode(s: &str) -> Option<SplitMode> {
    [SplitMode::Random, SplitMode::CentroidDistance]
        .into_iter()
        .find(|m| m.as_str() == s)
}

fn label_rule(s: &str) -> Option<LabelRule> {
    [LabelRule::LinearLogit, LabelRule::Radial]
        .into_iter()
        .find(|m| m.as_str() == s)
}

fn rule(s: &str) -> Option<QuantileRule> {
    match s {
        "standard" => Some(QuantileRule::Standard),
        "tibshirani" => Some(QuantileRule::Tibshirani),
        _ => None,
    }
}

fn rule_name(r: QuantileRule) -> &'static str {
    match r {
        QuantileRule::Standard => "standard",
        QuantileRule::Tibshirani => "tibshirani",
    }
}

fn existing(key: &'static str, value: String) -> Result<PathBuf, ConfigError> {
    let path = PathBuf::from(value);
    if path.is_file() {
        Ok(path)
    } else {
        Err(ConfigError::MissingFile {
            key: key.into(),
            path,
        })
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let known = COMMON_KEYS.contains(&k) || SYNTHETIC_KEYS.contains(&k) || CSV_KEYS.contains(&k);
        if !known {
            return Err(ConfigError::UnknownKey {
                key: k.into(),
                line: i + 1,
            });
        }
        if map.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
            return Err(ConfigError::Duplicate {
                key: k.into(),
                line: i + 1,
            });
        }
    }
    let mut e = Entries { map };

    let source = e.take("data.source").ok_or(ConfigError::Missing("data.source"))?.0;
    let foreign = match source.as_str() {
        "synthetic" => CSV_KEYS,
        "csv" => SYNTHETIC_KEYS,
        _ => {
            return Err(ConfigError::BadEnum {
                key: "data.source".into(),
                value: source,
                allowed: "synthetic, csv".into(),
            })
        }
    };
    if let Some((k, (_, line))) = e.map.iter().find(|(k, _)| foreign.contains(&k.as_str())) {
        return Err(ConfigError::NotApplicable {
            key: k.clone(),
            line: *line,
            source_kind: source,
        });
    }

    let data = if source == "synthetic" {
        DataSource::Synthetic(SyntheticConfig {
            dim: e.count("synthetic.dim", 2)?,
            n_source: e.count("synthetic.n_source", 2000)?,
            n_target: e.count("synthetic.n_target", 1000)?,
            overlap: e.real("synthetic.overlap", 1.0)?,
            separation: e.real("synthetic.separation", 0.0)?,
            label_rule: e.choice(
                "synthetic.label_rule",
                label_rule,
                &["linear_logit", "radial"],
                LabelRule::LinearLogit,
            )?,
        })
    } else {
        let labeled = e.take("csv.labeled").ok_or(ConfigError::Missing("csv.labeled"))?.0;
        DataSource::Csv(CsvConfig {
            labeled: existing("csv.labeled", labeled)?,
            test: e.take("csv.test").map(|(v, _)| existing("csv.test", v)).transpose()?,
            n_prob_cols: e.count("csv.n_prob_cols", 0)?,
        })
    };

    let dataset = match e.take("dataset.name") {
        Some((v, _)) => v,
        None => match &data {
            DataSource::Synthetic(_) => "synthetic".to_string(),
            DataSource::Csv(c) => c
                .labeled
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        },
    };
    if dataset.is_empty() || dataset.contains(',') {
        return Err(ConfigError::Invalid("dataset.name must be non-empty and comma-free".into()));
    }

    let method_names: Vec<&str> = WeightMethod::ALL.iter().map(|m| m.as_str()).collect();
    let methods = e
        .list("methods", |s| {
            WeightMethod::parse(s).ok_or_else(|| ConfigError::BadEnum {
                key: "methods".into(),
                value: s.into(),
                allowed: method_names.join(", "),
            })
        })?
        .ok_or(ConfigError::Missing("methods"))?;
    let modes = e
        .list("modes", |s| {
            CalibrationMode::parse(s).ok_or_else(|| ConfigError::BadEnum {
                key: "modes".into(),
                value: s.into(),
                allowed: "global, mondrian".into(),
            })
        })?
        .unwrap_or_else(|| vec![CalibrationMode::Global]);
    let seeds = e
        .list("seeds", |s| {
            s.parse::<u64>().map_err(|_| ConfigError::Type {
                key: "seeds".into(),
                value: s.into(),
                expected: "a comma list of unsigned integers",
            })
        })?
        .ok_or(ConfigError::Missing("seeds"))?;
    let explicit_levels = e.list("levels", |s| {
        s.parse::<f64>().map_err(|_| ConfigError::Type {
            key: "levels".into(),
            value: s.into(),
            expected: "a comma list of reals",
        })
    })?;
    let preset = e.choice(
        "levels.preset",
        |s| match s {
            "default" => Some(false),
            "extended" => Some(true),
            _ => None,
        },
        &["default", "extended"],
        false,
    )?;
    let levels = match explicit_levels {
        Some(l) => l,
        None if preset => extended_levels(),
        None => default_levels(),
    };

    let kmm = KmmConfig {
        b_bound: e.real("kmm.b_bound", 30.0)?,
        epsilon: e.parsed("kmm.epsilon", "a real number")?,
        tau: e.real("kmm.tau", 0.5)?,
        alpha_threshold: e.real("kmm.alpha_threshold", 0.2)?,
        tol: e.parsed("qp.tol", "a real number")?,
        max_iter: e.count("qp.max_iter", DEFAULT_MAX_ITER)?,
    };

    let cfg = RunConfig {
        dataset,
        data,
        calibration_fraction: e.real("split.calibration_fraction", 0.5)?,
        test_fraction: e.real("split.test_fraction", 0.15)?,
        split_mode: e.choice(
            "split.mode",
            split_mode,
            &["random", "centroid_distance"],
            SplitMode::CentroidDistance,
        )?,
        methods,
        modes,
        levels,
        kmm,
        n_permutations: e.count("kernel.n_permutations", DEFAULT_PERMUTATIONS)?,
        sigma: e.parsed("kernel.sigma", "a real number")?,
        kde_holdout_fraction: e.real("kde.holdout_fraction", 0.2)?,
        classifier_reg: e.real("classifier.reg", 1.0)?,
        predictor_reg: e.real("predictor.reg", 1.0)?,
        delta: e.real("eval.delta", DEFAULT_DELTA)?,
        rule: e.choice(
            "conformal.rule",
            rule,
            &["standard", "tibshirani"],
            QuantileRule::Standard,
        )?,
        seeds,
        output_dir: PathBuf::from(e.take("output.dir").map(|v| v.0).unwrap_or_else(|| "out".into())),
    };
    debug_assert!(e.map.is_empty(), "unconsumed keys {:?}", e.map.keys());
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (what, empty) in [
            ("methods", self.methods.is_empty()),
            ("modes", self.modes.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return bad(format!("{what} must be non-empty"));
            }
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return bad("methods contains duplicates".into());
        }
        let mut s = self.seeds.clone();
        s.sort();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seeds contains duplicates".into());
        }
        let mut md = self.modes.clone();
        md.sort();
        md.dedup();
        if md.len() != self.modes.len() {
            return bad("modes contains duplicates".into());
        }
        if self.levels.is_empty()
            || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0))
            || self.levels.windows(2).any(|w| !(w[0] < w[1]))
        {
            return bad("levels must be strictly increasing values in (0, 1)".into());
        }
        self.kmm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let DataSource::Synthetic(s) = &self.data {
            if s.dim == 0 || s.n_source < 4 || s.n_target < 2 {
                return bad("synthetic sizes too small (dim >= 1, n_source >= 4, n_target >= 2)".into());
            }
            if !(0.0..=1.0).contains(&s.overlap) || s.separation < 0.0 {
                return bad("synthetic.overlap must lie in [0, 1] and separation be >= 0".into());
            }
        }
        let frac = |f: f64| f > 0.0 && f < 1.0;
        if !frac(self.calibration_fraction) || !frac(self.test_fraction) {
            return bad("split fractions must lie in (0, 1)".into());
        }
        if self.calibration_fraction + self.test_fraction > 1.0 {
            return bad("split fractions sum above 1".into());
        }
        if !frac(self.kde_holdout_fraction) {
            return bad("kde.holdout_fraction must lie in (0, 1)".into());
        }
        if self.classifier_reg < 0.0 || self.predictor_reg < 0.0 {
            return bad("regularization must be >= 0".into());
        }
        if !frac(self.delta) {
            return bad("eval.delta must lie in (0, 1)".into());
        }
        if self.n_permutations == 0 {
            return bad("kernel.n_permutations must be >= 1".into());
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("kernel.sigma must be positive".into());
            }
        }
        Ok(())
    }

    /// Every setting as `key → value`, with defaults spelled out. Optional
    /// settings that are unset are omitted.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        fn join<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
            v.iter().map(f).collect::<Vec<_>>().join(",")
        }
        let mut out = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        put("dataset.name", self.dataset.clone());
        match &self.data {
            DataSource::Synthetic(s) => {
                put("data.source", "synthetic".into());
                put("synthetic.dim", s.dim.to_string());
                put("synthetic.n_source", s.n_source.to_string());
                put("synthetic.n_target", s.n_target.to_string());
                put("synthetic.overlap", s.overlap.to_string());
                put("synthetic.separation", s.separation.to_string());
                put("synthetic.label_rule", s.label_rule.as_str().into());
            }
            DataSource::Csv(c) => {
                put("data.source", "csv".into());
                put("csv.labeled", c.labeled.display().to_string());
                if let Some(t) = &c.test {
                    put("csv.test", t.display().to_string());
                }
                put("csv.n_prob_cols", c.n_prob_cols.to_string());
            }
        }
        put("split.calibration_fraction", self.calibration_fraction.to_string());
        put("split.test_fraction", self.test_fraction.to_string());
        put("split.mode", self.split_mode.as_str().into());
        put("methods", join(&self.methods, |m| m.as_str().into()));
        put("modes", join(&self.modes, |m| m.as_str().into()));
        put("levels", join(&self.levels, |l| l.to_string()));
        put("seeds", join(&self.seeds, |s| s.to_string()));
        put("output.dir", self.output_dir.display().to_string());
        put("kmm.b_bound", self.kmm.b_bound.to_string());
        if let Some(eps) = self.kmm.epsilon {
            put("kmm.epsilon", eps.to_string());
        }
        put("kmm.tau", self.kmm.tau.to_string());
        put("kmm.alpha_threshold", self.kmm.alpha_threshold.to_string());
        if let Some(t) = self.kmm.tol {
            put("qp.tol", t.to_string());
        }
        put("qp.max_iter", self.kmm.max_iter.to_string());
        put("kernel.n_permutations", self.n_permutations.to_string());
        if let Some(s) = self.sigma {
            put("kernel.sigma", s.to_string());
        }
        put("kde.holdout_fraction", self.kde_holdout_fraction.to_string());
        put("classifier.reg", self.classifier_reg.to_string());
        put("predictor.reg", self.predictor_reg.to_string());
        put("eval.delta", self.delta.to_string());
        put("conformal.rule", rule_name(self.rule).into());
        out
    }

    /// Config text that parses back to `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// The calibration sample size each seed will see.
    pub fn n_calibration(&self) -> Option<usize> {
        match &self.data {
            DataSource::Synthetic(s) => Some(crate::data::rounded_count(self.calibration_fraction, s.n_source)),
            DataSource::Csv(_) => None,
        }
    }
}
