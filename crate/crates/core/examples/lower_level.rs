//! Solves one task's lower-level group lasso by unrolled dual ascent and
//! differentiates the solution with respect to the group assignment.

use mixbil::data::{generate, GenConfig};
use mixbil::lowerlevel::{
    lower_solve, lower_vjp, precompute, primal_objective, DualScheme, SolverSettings,
};

fn main() -> mixbil::Result<()> {
    let bundle = generate(&GenConfig {
        d: 12,
        groups: 3,
        tasks: 1,
        n: 30,
        noise_variance: 0.1,
        seed: 1,
    })?;
    let task = &bundle.tasks[0];
    let theta = bundle.oracle_assignment();
    let lambda = 0.2;
    let factor = precompute(&task.train, 1e-3)?;
    println!("step size {:.4e}", factor.step_size());

    for scheme in [DualScheme::Projected, DualScheme::Accelerated] {
        for q in [10, 100, 1000] {
            let tape = lower_solve(
                &factor,
                theta.as_matrix(),
                lambda,
                SolverSettings::new(q, scheme),
                None,
            )?;
            let obj = primal_objective(&task.train, theta.as_matrix(), lambda, 1e-3, &tape.w);
            println!("{scheme:?} q={q:<5} primal objective {obj:.10}");
        }
    }

    let tape = lower_solve(
        &factor,
        theta.as_matrix(),
        lambda,
        SolverSettings::new(200, DualScheme::Projected),
        None,
    )?;
    let recovery: Vec<f64> = tape
        .w
        .iter()
        .zip(&task.w_star)
        .map(|(a, b)| a - b)
        .collect();
    let grad = lower_vjp(&factor, &tape, &recovery)?;
    println!("d(½‖w − w*‖²)/dθ, first rows:");
    for i in 0..4 {
        println!(
            "  {:?}",
            grad.row(i)
                .iter()
                .map(|v| format!("{v:+.4}"))
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}
