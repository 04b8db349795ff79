//! Runs the continuation and the relax-and-round baseline on the same
//! data, λ and seed, and compares their errors.
//!
//! cargo run --release --example compare_methods -- [lambda] [seed]

use mixbil::cli::{ExperimentConfig, Profile};
use mixbil::data::generate;
use mixbil::outer::{run_cell, Method};

fn main() -> mixbil::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map_or(0.1, |s| s.parse().expect("lambda"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let cfg = ExperimentConfig::profile(Profile::Desk);
    let bundle = generate(&cfg.gen_for_seed(seed))?;
    println!("method    val       test      recon     epochs  forced_snap  pre/post-round G");
    for method in [Method::Mib, Method::Bilevel] {
        let r = run_cell(&bundle, method, lambda, seed, &cfg.run)?;
        println!(
            "{:<8}  {:.5}  {:.5}  {:.5}  {:>6}  {:<11}  {:.5} / {:.5}",
            method.label(),
            r.validation_error,
            r.test_error,
            r.reconstruction_error,
            r.total_epochs,
            r.forced_snap,
            r.pre_round_loss,
            r.post_round_loss
        );
    }
    Ok(())
}
