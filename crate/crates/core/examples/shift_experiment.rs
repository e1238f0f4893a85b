// A full synthetic shift experiment, summarized per method.

use shiftcal::config::parse_config_str;
use shiftcal::evaluation::aggregate;
use shiftcal::experiment::run_experiment;

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let cfg = parse_config_str(
        "data.source = synthetic
synthetic.n_source = 400
synthetic.n_target = 200
synthetic.overlap = 0.3
synthetic.separation = 4
methods = uniform,kde,classifier,kmm,skmm
seeds = 0,1,2
",
    )?;
    let summary = run_experiment(&cfg, 2)?;
    for r in &summary.reports {
        println!(
            "{:<10} seed {}  MAD {:.4}  ESS {:6.1}  MMD {:.4}  retained {:.2}",
            r.method.as_str(),
            r.seed,
            r.mad,
            r.ess,
            r.mmd,
            r.retained_fraction
        );
    }
    let rows = aggregate(&cfg.dataset, &summary.reports)?;
    for row in rows.iter().filter(|r| r.level == 0.9) {
        println!("{:<10} coverage at 0.9: {:.3} ± {:.3}", row.method.as_str(), row.coverage_mean, row.coverage_std);
    }
    Ok(summary.reports.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
