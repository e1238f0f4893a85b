// Write a labeled table to CSV, then run the experiment from a config file.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::config::parse_config;
use shiftcal::data::{write_features_csv, FeatureTable};
use shiftcal::experiment::run;

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_simple_fn((300, 3), || rng.sample::<f64, _>(StandardNormal));
    let labels = x.rows().into_iter().map(|r| usize::from(r[0] - 0.5 * r[1] > 0.0)).collect();
    let ids = (0..300).map(|i| format!("row{i}")).collect();
    let labeled = dir.path().join("labeled.csv");
    write_features_csv(&FeatureTable::new(ids, x, Some(labels), None)?, &labeled)?;

    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        format!(
            "data.source = csv\ncsv.labeled = {}\nsplit.mode = centroid_distance\n\
             methods = uniform,kmm,skmm\nmodes = global,mondrian\nseeds = 0,1\n",
            labeled.display()
        ),
    )?;
    let cfg = parse_config(&config)?;
    let out = dir.path().join("out");
    let summary = run(&cfg, &out, 1)?;
    let mut names = std::fs::read_dir(out.join("reports"))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<Vec<_>, _>>()?;
    names.sort();
    for name in names {
        println!("wrote {name}");
    }
    print!("{}", std::fs::read_to_string(out.join("aggregate.csv"))?.lines().take(3).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(summary.reports.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
