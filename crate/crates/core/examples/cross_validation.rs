//! Full desk-profile sweep: both methods over the λ grid and seeds,
//! writing records, summary.csv, groups.csv and report.csv.
//!
//! cargo run --release --example cross_validation -- [out_dir]

use std::path::PathBuf;

use mixbil::cli::{collect_records, report, report_csv, run_grid, ExperimentConfig, Profile};

fn main() -> mixbil::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out-desk".into()));
    let cfg = ExperimentConfig::profile(Profile::Desk);
    let started = std::time::Instant::now();
    let grid = run_grid(&cfg, &out)?;
    for r in &grid.results {
        println!("{}:", r.method.label());
        for s in &r.summary {
            let mark = if s.lambda == r.selected_lambda {
                "*"
            } else {
                " "
            };
            println!(
                "  {mark} lambda {:<10.4e} validation {:.5} ± {:.5}",
                s.lambda, s.mean, s.std
            );
        }
    }
    print!("{}", report_csv(&report(&collect_records(&out)?)?));
    println!(
        "wall clock {:.1}s, artifacts in {}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
