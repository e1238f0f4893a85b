//! Sample tables, CSV ingestion, dataset splits and synthetic shift generators.

mod csv_io;
mod split;
mod synthetic;
mod table;

use std::path::PathBuf;

pub use csv_io::{ingest_features_csv, read_features_csv, write_features_csv};
pub use split::{centroid_distance_split, random_test_split, split_train_cal, SplitMode, SplitSpec};
pub(crate) use split::rounded_count;
pub use synthetic::{make_gaussian_shift, GaussianShift, LabelRule, SyntheticShiftSpec};
pub use table::{FeatureTable, PROB_SUM_TOL};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("table has no feature columns")]
    NoFeatures,
    #[error("class_probs has no columns")]
    NoClasses,
    #[error("{what} has {found} rows, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite feature value in row {id}")]
    NonFinite { id: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("probability row not normalized for id {id} (sum {sum})")]
    ProbabilityRow { id: String, sum: f64 },
    #[error("label {label} of row {id} outside [0, {n_classes})")]
    LabelOutOfRange {
        id: String,
        label: usize,
        n_classes: usize,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("bad header in {path}: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("non-numeric cell {value:?} in column {column}, line {line}")]
    BadCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("empty table")]
    Empty,
    #[error("table requires labels")]
    Unlabeled,
    #[error("fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("calibration_fraction + test_fraction = {0} exceeds 1")]
    FractionsExceedOne(f64),
    #[error("table of {n} rows is too small for the requested split")]
    TooSmall { n: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSynthetic(String),
}
