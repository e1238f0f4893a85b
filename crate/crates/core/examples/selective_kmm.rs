// Selective KMM drops targets the calibration sample cannot reach.

use shiftcal::data::{make_gaussian_shift, LabelRule, SyntheticShiftSpec};
use shiftcal::kernel::gram_blocks;
use shiftcal::weighting::{solve_kmm, two_stage_skmm_in, KmmConfig};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let data = make_gaussian_shift(&SyntheticShiftSpec {
        dim: 2,
        n_source: 200,
        n_target: 120,
        overlap: 0.5,
        separation: 6.0,
        label_rule: LabelRule::LinearLogit,
        seed: 1,
    })?;
    let (cal, test) = (data.source.features().view(), data.target.features().view());
    let ctx = gram_blocks(cal, test, 1.0)?;
    let cfg = KmmConfig::default();
    let (ws, joint) = two_stage_skmm_in(&ctx, data.target.ids(), &cfg)?;

    let kept = ws.selected_target_ids.as_ref().map_or(0, Vec::len);
    let kept_rows: Vec<usize> = (0..120).filter(|&j| joint.alpha[j] >= cfg.alpha_threshold).collect();
    let pure = kept_rows.iter().filter(|&&j| data.target_in_source_component[j]).count();
    let plain = solve_kmm(&ctx, &cfg)?;
    println!("retained {kept} of 120 targets, {pure} of them from the source component");
    println!("ESS selective {:.1}, plain KMM {:.1}", ws.ess, plain.ess);
    Ok(kept as f64 / 120.0)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
