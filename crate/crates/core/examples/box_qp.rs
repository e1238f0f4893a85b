// Solve a small box- and row-constrained convex QP.

use ndarray::array;
use shiftcal::qp::{default_tol, solve, QpProblem};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    // ½vᵀQv + cᵀv over 0 ≤ v ≤ 2 with v₀ + v₁ + v₂ ≤ 2.
    let problem = QpProblem::new(
        array![[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]],
        array![-3.0, -2.0, -1.0],
        array![0.0, 0.0, 0.0],
        array![2.0, 2.0, 2.0],
        array![[1.0, 1.0, 1.0]],
        array![2.0],
    )?;
    let sol = solve(&problem, default_tol(&problem), 10_000)?;
    println!("v = {:.6}", sol.v);
    println!(
        "objective {:.8}, {} iterations, stationarity {:.2e}, row multiplier {:.4}",
        sol.objective, sol.iterations, sol.kkt_stationarity, sol.row_multipliers[0]
    );
    assert!(sol.converged);
    Ok(sol.objective)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(drop)
}
