// Kernel mean matching weights for a shifted target.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::kernel::{gram_blocks, mmd_squared_weighted};
use shiftcal::weighting::{solve_kmm, KmmConfig};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cal = Array2::from_shape_simple_fn((150, 2), || rng.sample::<f64, _>(StandardNormal));
    let test = Array2::from_shape_simple_fn((100, 2), || 0.8 + 0.7 * rng.sample::<f64, _>(StandardNormal));

    let ctx = gram_blocks(cal.view(), test.view(), 1.0)?;
    let cfg = KmmConfig::default();
    let ws = solve_kmm(&ctx, &cfg)?;

    let ones = Array1::ones(100);
    let before = mmd_squared_weighted(&ctx, Array1::ones(150).view(), ones.view())?;
    let after = mmd_squared_weighted(&ctx, ws.raw.view(), ones.view())?;
    let max = ws.raw.iter().copied().fold(0.0, f64::max);
    println!("epsilon {:.4}, B {}", cfg.epsilon_for(150), cfg.b_bound);
    println!("MMD² uniform {before:.5}, weighted {after:.5}");
    println!("ESS {:.1} of 150, largest weight {max:.3}", ws.ess);
    Ok(after)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
