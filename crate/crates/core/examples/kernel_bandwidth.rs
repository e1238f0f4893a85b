// Pick an RBF bandwidth for two samples and report the resulting MMD².

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::kernel::{bandwidth_scores, median_distance, mmd_squared, select_bandwidth};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let source = Array2::from_shape_simple_fn((80, 2), || rng.sample::<f64, _>(StandardNormal));
    let target = Array2::from_shape_simple_fn((60, 2), || 1.5 + rng.sample::<f64, _>(StandardNormal));

    println!("median cross distance {:.4}", median_distance(source.view(), target.view(), 1_000_000));
    for s in bandwidth_scores(source.view(), target.view(), 50, 0)? {
        println!("sigma {:8.4}  mmd2 {:.5}  z {:6.2}", s.sigma, s.observed, s.z_score);
    }
    let sigma = select_bandwidth(source.view(), target.view(), 50, 0)?;
    let mmd = mmd_squared(source.view(), target.view(), sigma)?;
    println!("chosen sigma {sigma:.4}, MMD² {mmd:.5}");
    Ok(sigma)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
