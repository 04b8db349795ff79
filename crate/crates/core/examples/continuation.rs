//! Runs the ε-continuation on a small synthetic problem and prints the
//! stage schedule and the distance of each stage's iterate to the
//! binary set.

use mixbil::data::{generate, substream, GenConfig, Stream};
use mixbil::lowerlevel::{DualScheme, SolverSettings};
use mixbil::outer::{penalty_loop, ContinuationConfig, PenalizedObjective};
use mixbil::upper::{initial_theta, AdamConfig, GroupLassoObjective, StageConfig};

fn main() -> mixbil::Result<()> {
    let bundle = generate(&GenConfig {
        d: 20,
        groups: 4,
        tasks: 10,
        n: 15,
        noise_variance: 0.1,
        seed: 2,
    })?;
    let mut obj = GroupLassoObjective::new(
        &bundle,
        0.05,
        1e-3,
        SolverSettings::new(100, DualScheme::Accelerated),
    )?;
    let cfg = ContinuationConfig {
        stages: 8,
        stage: StageConfig {
            epochs: 60,
            batch_size: 5,
            ..StageConfig::default()
        },
        adam: AdamConfig {
            tangent_rows: true,
            ..AdamConfig::default()
        },
        ..ContinuationConfig::default()
    };
    let theta0 = initial_theta(20, 4, &mut substream(2, Stream::ThetaInit, 0));
    let out = penalty_loop(
        &mut obj,
        &cfg,
        theta0,
        &mut substream(2, Stream::Minibatch, 0),
    )?;

    for (k, s) in out.stages.iter().enumerate() {
        let eps = s.eps.map_or("inf".to_string(), |e| format!("{e}"));
        let last = s.trace.last().expect("at least one epoch");
        println!(
            "stage {k:>2}  eps {eps:>9}  epochs {:>3}  loss {:.5}  dist {:.4}",
            s.trace.len(),
            last.loss,
            s.final_dist_inf
        );
    }
    println!("forced snap: {}", out.forced_snap);
    println!("final labels {:?}", out.theta.labels());
    println!("oracle      {:?}", bundle.labels);
    println!("G(final) = {:.5}", obj.value(out.theta.as_matrix())?);
    Ok(())
}
