//! Checks the reverse-mode hypergradient of the penalized validation
//! objective against central finite differences.

use mixbil::data::{generate, GenConfig};
use mixbil::lowerlevel::{DualScheme, SolverSettings};
use mixbil::outer::PenalizedObjective;
use mixbil::upper::GroupLassoObjective;
use mixbil::verify::finite_diff;

fn main() -> mixbil::Result<()> {
    let bundle = generate(&GenConfig {
        d: 4,
        groups: 2,
        tasks: 3,
        n: 5,
        noise_variance: 0.1,
        seed: 3,
    })?;
    let mut obj = GroupLassoObjective::new(
        &bundle,
        0.1,
        1e-3,
        SolverSettings::new(30, DualScheme::Projected),
    )?
    .with_warm_start(false);
    let theta = mixbil::linalg::DenseMatrix::from_rows(&[
        vec![0.3, 0.7],
        vec![0.6, 0.4],
        vec![0.45, 0.55],
        vec![0.8, 0.2],
    ])?;
    let batch = [0, 1, 2];
    let eps = 2.0;
    let eval = obj.evaluate(&batch, &theta, eps)?;
    let fd = finite_diff(
        |t| obj.evaluate(&batch, t, eps).unwrap().objective,
        &theta,
        1e-5,
    );
    println!(
        "objective {:.8} (loss {:.8}, phi {:.4})",
        eval.objective, eval.loss, eval.penalty
    );
    for i in 0..theta.rows() {
        println!(
            "row {i}: reverse {:+.6e} {:+.6e}   finite diff {:+.6e} {:+.6e}",
            eval.grad[(i, 0)],
            eval.grad[(i, 1)],
            fd[(i, 0)],
            fd[(i, 1)]
        );
    }
    println!("max abs difference {:.3e}", eval.grad.max_abs_diff(&fd));
    Ok(())
}
