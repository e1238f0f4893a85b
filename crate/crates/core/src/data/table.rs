use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, Axis};

use super::DataError;

/// Tolerance on the row sums of `class_probs`.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Labeled or unlabeled samples sharing one feature space.
///
/// Rows of `features`, `labels` and `class_probs` are aligned with `ids`.
/// `class_probs` holds a predictor's class probabilities for each row and is
/// what nonconformity scores are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_probs: Option<Array2<f64>>,
}

impl FeatureTable {
    pub fn new(
        ids: Vec<String>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        class_probs: Option<Array2<f64>>,
    ) -> Result<Self, DataError> {
        let n = ids.len();
        if features.ncols() == 0 {
            return Err(DataError::NoFeatures);
        }
        if features.nrows() != n {
            return Err(DataError::ShapeMismatch {
                what: "features",
                expected: n,
                found: features.nrows(),
            });
        }
        if let Some((i, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let row = i / features.ncols();
            return Err(DataError::NonFinite {
                id: ids[row].clone(),
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(DataError::ShapeMismatch {
                    what: "labels",
                    expected: n,
                    found: labels.len(),
                });
            }
        }
        if let Some(probs) = &class_probs {
            if probs.nrows() != n {
                return Err(DataError::ShapeMismatch {
                    what: "class_probs",
                    expected: n,
                    found: probs.nrows(),
                });
            }
            if probs.ncols() == 0 {
                return Err(DataError::NoClasses);
            }
            for (row, p) in probs.axis_iter(Axis(0)).enumerate() {
                check_prob_row(p).map_err(|sum| DataError::ProbabilityRow {
                    id: ids[row].clone(),
                    sum,
                })?;
            }
            if let Some(labels) = &labels {
                let k = probs.ncols();
                if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
                    return Err(DataError::LabelOutOfRange {
                        id: ids[row].clone(),
                        label,
                        n_classes: k,
                    });
                }
            }
        }
        Ok(Self {
            ids,
            features,
            labels,
            class_probs,
        })
    }

    /// Table of unlabeled features with ids `{prefix}{row}`.
    pub fn from_features(prefix: &str, features: Array2<f64>) -> Result<Self, DataError> {
        let ids = (0..features.nrows()).map(|i| format!("{prefix}{i}")).collect();
        Self::new(ids, features, None, None)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_probs(&self) -> Option<&Array2<f64>> {
        self.class_probs.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes: the width of `class_probs` when present, otherwise
    /// one more than the largest label.
    pub fn n_classes(&self) -> Option<usize> {
        match (&self.class_probs, &self.labels) {
            (Some(p), _) => Some(p.ncols()),
            (None, Some(l)) => l.iter().max().map(|m| m + 1),
            (None, None) => None,
        }
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_probs: self
                .class_probs
                .as_ref()
                .map(|p| p.select(Axis(0), indices)),
        }
    }

    /// Replaces the class probabilities, validating them against the table.
    pub fn with_class_probs(self, probs: Array2<f64>) -> Result<Self, DataError> {
        Self::new(self.ids, self.features, self.labels, Some(probs))
    }
}

/// Checks one probability row; on failure returns its sum.
pub(crate) fn check_prob_row(p: ArrayView1<'_, f64>) -> Result<(), f64> {
    let sum: f64 = p.sum();
    let in_range = p.iter().all(|&v| (0.0..=1.0).contains(&v));
    if in_range && (sum - 1.0).abs() <= PROB_SUM_TOL {
        Ok(())
    } else {
        Err(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = FeatureTable::new(
            vec!["a".into(), "a".into()],
            array![[0.0], [1.0]],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn rejects_unnormalized_probabilities() {
        let err = FeatureTable::new(ids(1), array![[0.0]], None, Some(array![[0.6, 0.6]]))
            .unwrap_err();
        assert!(err.to_string().contains("probability row not normalized"));
    }

    #[test]
    fn rejects_label_outside_class_range() {
        let err = FeatureTable::new(
            ids(2),
            array![[0.0], [1.0]],
            Some(vec![0, 2]),
            Some(array![[0.5, 0.5], [0.1, 0.9]]),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn rejects_zero_width_features() {
        let err = FeatureTable::new(ids(2), Array2::zeros((2, 0)), None, None).unwrap_err();
        assert!(matches!(err, DataError::NoFeatures));
    }

    #[test]
    fn select_keeps_rows_aligned() {
        let t = FeatureTable::new(
            ids(3),
            array![[0.0], [1.0], [2.0]],
            Some(vec![0, 1, 1]),
            Some(array![[0.9, 0.1], [0.2, 0.8], [0.4, 0.6]]),
        )
        .unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.ids(), &["r2".to_string(), "r0".to_string()]);
        assert_eq!(s.labels().unwrap(), &[1, 0]);
        assert_eq!(s.features()[[0, 0]], 2.0);
        assert_eq!(s.class_probs().unwrap()[[1, 0]], 0.9);
        assert_eq!(s.n_classes(), Some(2));
    }
}
