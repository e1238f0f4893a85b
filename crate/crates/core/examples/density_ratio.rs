// KDE and probabilistic-classifier density-ratio weights side by side.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftcal::weighting::{classifier_ratio_weights, kde_ratio_weights, odds_weight};

pub fn run_example() -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cal = Array2::from_shape_simple_fn((200, 1), || rng.sample::<f64, _>(StandardNormal));
    let test = Array2::from_shape_simple_fn((200, 1), || 1.0 + rng.sample::<f64, _>(StandardNormal));

    let kde = kde_ratio_weights(cal.view(), test.view(), 0.2, 0)?;
    let clf = classifier_ratio_weights(cal.view(), test.view(), 1.0)?;
    // The true ratio of N(1, 1) to N(0, 1) is exp(x − ½).
    let truth: Vec<f64> = cal.column(0).iter().map(|x| (x - 0.5).exp()).collect();
    let err = |w: &ndarray::Array1<f64>| {
        w.iter().zip(&truth).map(|(a, b)| (a.ln() - b.ln()).abs()).sum::<f64>() / 200.0
    };
    println!("mean |log error|  kde {:.3}  classifier {:.3}", err(&kde.raw), err(&clf.raw));
    println!("ESS kde {:.1}, classifier {:.1}", kde.ess, clf.ess);
    println!("odds weight at eta = 0.9 with n = m: {:.1}", odds_weight(0.9, 200, 200));
    Ok((kde.ess, clf.ess))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
