// Weighted split-conformal thresholds and prediction sets.

use ndarray::array;
use shiftcal::conformal::{build_records, calibrate_global, prediction_set, score_from_probs};

pub fn run_example() -> Result<Vec<usize>, Box<dyn std::error::Error>> {
    let probs = array![[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8], [0.55, 0.45], [0.8, 0.2]];
    let labels = [0, 1, 1, 0, 0, 0];
    let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    let scores = (0..6)
        .map(|i| score_from_probs(probs.row(i), labels[i]))
        .collect::<Result<Vec<_>, _>>()?;
    // Upweight the records that look most like the test distribution.
    let raw = [0.5, 1.0, 2.0, 2.0, 1.0, 0.5];
    let records = build_records(&ids, &scores, &labels, &raw)?;

    let test = array![0.4, 0.6];
    let mut sizes = Vec::new();
    for level in [0.5, 0.8, 0.95] {
        let cal = calibrate_global(&records, level)?;
        let set = prediction_set(test.view(), cal.threshold_for(0));
        println!("level {level:.2}: threshold {:.3}, set {set:?}", cal.threshold_for(0));
        sizes.push(set.len());
    }
    Ok(sizes)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
