// Class-conditional (Mondrian) thresholds next to a single global one.

use shiftcal::conformal::{build_records, calibrate_global, calibrate_mondrian};

pub fn run_example() -> Result<(f64, f64), Box<dyn std::error::Error>> {
    // Class 1 is much harder than class 0.
    let scores = [0.05, 0.1, 0.15, 0.2, 0.1, 0.5, 0.6, 0.7, 0.8, 0.9];
    let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let raw = [1.0; 10];
    let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let records = build_records(&ids, &scores, &labels, &raw)?;

    let global = calibrate_global(&records, 0.8)?;
    let mondrian = calibrate_mondrian(&records, 0.8, &raw)?;
    println!("global threshold {:.2}", global.threshold_for(0));
    for class in 0..3 {
        println!("class {class}: mondrian threshold {}", mondrian.threshold_for(class));
    }
    Ok((mondrian.threshold_for(0), mondrian.threshold_for(1)))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
