//! Split-conformal prediction sets calibrated under covariate shift.
//!
//! Calibration scores are reweighted toward the test distribution before the
//! threshold is taken. Weights come from kernel mean matching ([`weighting::solve_kmm`]),
//! its selective variant that first decides which test points the calibration
//! sample can support ([`weighting::two_stage_skmm`]), or KDE and classifier
//! density-ratio baselines. [`experiment`] ties data, weights, calibration and
//! evaluation together; the `shiftcal` binary drives it from a config file.
//!
//! ```
//! use shiftcal::conformal::{build_records, calibrate_global};
//!
//! let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
//! let records = build_records(&ids, &[0.1, 0.4, 0.2, 0.9], &[0; 4], &[1.0, 1.0, 2.0, 0.5]).unwrap();
//! assert_eq!(calibrate_global(&records, 0.5).unwrap().threshold_for(0), 0.2);
//! ```

pub mod config;
pub mod conformal;
pub mod data;
pub mod digits;
pub mod evaluation;
pub mod experiment;
pub mod kernel;
mod linalg;
pub mod qp;
pub mod rng;
pub mod weighting;
