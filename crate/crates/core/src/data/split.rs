use std::cmp::Ordering;

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureTable};
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    CentroidDistance,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Random => "random",
            SplitMode::CentroidDistance => "centroid_distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub calibration_fraction: f64,
    pub test_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        check_fraction(self.calibration_fraction)?;
        check_fraction(self.test_fraction)?;
        let total = self.calibration_fraction + self.test_fraction;
        if total > 1.0 {
            return Err(DataError::FractionsExceedOne(total));
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<(), DataError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(DataError::BadFraction(f))
    }
}

/// `round(fraction * n)`, halves rounded up, never below 1.
pub(crate) fn rounded_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).max(1)
}

fn partition(table: &FeatureTable, chosen: &[usize]) -> (FeatureTable, FeatureTable) {
    let mut mask = vec![false; table.n_rows()];
    for &i in chosen {
        mask[i] = true;
    }
    let (mut picked, mut rest): (Vec<usize>, Vec<usize>) =
        (0..table.n_rows()).partition(|&i| mask[i]);
    picked.sort_unstable();
    rest.sort_unstable();
    (table.select(&rest), table.select(&picked))
}

/// Holds out the rows farthest from the feature centroid.
///
/// Returns `(pool, test)`; `test` has `round(test_fraction * n)` rows (at
/// least one). Equal distances are ranked by ascending id. Both outputs keep
/// the input row order.
pub fn centroid_distance_split(
    table: &FeatureTable,
    test_fraction: f64,
) -> Result<(FeatureTable, FeatureTable), DataError> {
    if table.is_empty() {
        return Err(DataError::Empty);
    }
    check_fraction(test_fraction)?;
    let centroid = table
        .features()
        .mean_axis(Axis(0))
        .expect("non-empty table");
    let dist: Vec<f64> = table
        .features()
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .zip(centroid.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    order.sort_by(|&a, &b| {
        dist[b]
            .partial_cmp(&dist[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| table.ids()[a].cmp(&table.ids()[b]))
    });
    let k = rounded_count(test_fraction, table.n_rows()).min(table.n_rows());
    Ok(partition(table, &order[..k]))
}

/// Seeded random hold-out of `round(test_fraction * n)` rows; returns
/// `(pool, test)`.
pub fn random_test_split(
    table: &FeatureTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable), DataError> {
    check_fraction(test_fraction)?;
    let n = table.n_rows();
    if n < 2 {
        return Err(DataError::TooSmall { n });
    }
    let k = rounded_count(test_fraction, n).min(n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed, stream::TEST_SPLIT));
    Ok(partition(table, &idx[..k]))
}

/// Seeded shuffle into `(train, cal)`, `|cal| = round(calibration_fraction * n)`.
pub fn split_train_cal(
    table: &FeatureTable,
    spec: &SplitSpec,
) -> Result<(FeatureTable, FeatureTable), DataError> {
    spec.validate()?;
    if table.labels().is_none() {
        return Err(DataError::Unlabeled);
    }
    let n = table.n_rows();
    let k = rounded_count(spec.calibration_fraction, n);
    if n < 2 || k >= n {
        return Err(DataError::TooSmall { n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(spec.seed, stream::TRAIN_CAL_SPLIT));
    Ok(partition(table, &idx[..k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::BTreeSet;

    fn line(values: &[f64]) -> FeatureTable {
        let n = values.len();
        let ids = (0..n).map(|i| format!("p{i:02}")).collect();
        FeatureTable::new(
            ids,
            Array2::from_shape_vec((n, 1), values.to_vec()).unwrap(),
            Some(vec![0; n]),
            None,
        )
        .unwrap()
    }

    fn values(t: &FeatureTable) -> Vec<f64> {
        t.features().column(0).to_vec()
    }

    #[test]
    fn centroid_split_takes_both_extremes() {
        let t = line(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (pool, test) = centroid_distance_split(&t, 0.2).unwrap();
        assert_eq!(values(&test), vec![0.0, 9.0]);
        assert_eq!(pool.n_rows(), 8);
    }

    #[test]
    fn centroid_split_tie_breaks_by_id() {
        let t = line(&[1.0, 1.0]);
        let (_, test) = centroid_distance_split(&t, 0.5).unwrap();
        assert_eq!(test.ids(), &["p00".to_string()]);
    }

    #[test]
    fn centroid_split_rejects_empty() {
        let t = FeatureTable::new(vec![], Array2::zeros((0, 1)), None, None).unwrap();
        assert!(matches!(centroid_distance_split(&t, 0.5), Err(DataError::Empty)));
    }

    #[test]
    fn train_cal_rounds_and_partitions() {
        let t = line(&(0..10).map(f64::from).collect::<Vec<_>>());
        let spec = SplitSpec {
            calibration_fraction: 0.3,
            test_fraction: 0.1,
            mode: SplitMode::Random,
            seed: 7,
        };
        let (train, cal) = split_train_cal(&t, &spec).unwrap();
        assert_eq!(cal.n_rows(), 3);
        assert_eq!(train.n_rows(), 7);
        let (train2, cal2) = split_train_cal(&t, &spec).unwrap();
        assert_eq!((train, cal), (train2, cal2));
    }

    #[test]
    fn train_cal_partitions_hundred_rows() {
        let t = line(&(0..100).map(f64::from).collect::<Vec<_>>());
        let spec = SplitSpec {
            calibration_fraction: 0.37,
            test_fraction: 0.2,
            mode: SplitMode::Random,
            seed: 11,
        };
        let (train, cal) = split_train_cal(&t, &spec).unwrap();
        let a: BTreeSet<_> = train.ids().iter().cloned().collect();
        let b: BTreeSet<_> = cal.ids().iter().cloned().collect();
        assert!(a.is_disjoint(&b));
        let all: BTreeSet<_> = t.ids().iter().cloned().collect();
        assert_eq!(a.union(&b).cloned().collect::<BTreeSet<_>>(), all);
    }

    #[test]
    fn train_cal_rejects_tiny_tables() {
        let spec = SplitSpec {
            calibration_fraction: 0.5,
            test_fraction: 0.1,
            mode: SplitMode::Random,
            seed: 0,
        };
        assert!(matches!(
            split_train_cal(&line(&[1.0]), &spec),
            Err(DataError::TooSmall { n: 1 })
        ));
    }

    #[test]
    fn fractions_must_fit() {
        let spec = SplitSpec {
            calibration_fraction: 0.7,
            test_fraction: 0.4,
            mode: SplitMode::Random,
            seed: 0,
        };
        assert!(matches!(spec.validate(), Err(DataError::FractionsExceedOne(_))));
    }
}
