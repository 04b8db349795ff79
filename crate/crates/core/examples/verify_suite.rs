//! Runs the oracle suites and prints one line per check.
//!
//! cargo run --release --example verify_suite -- [quick|full]

use mixbil::verify::{lemma_suite, run_suite, Level};

fn main() -> mixbil::Result<()> {
    let level: Level = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "quick".into())
        .parse()?;
    for r in lemma_suite(0, 1000, 1e-12) {
        println!("{:<24} worst margin {:.3e}", r.name, r.worst_margin);
    }
    let checks = run_suite(level, 0)?;
    for c in &checks {
        println!("{c}");
    }
    if checks.iter().any(|c| !c.passed) {
        std::process::exit(3);
    }
    Ok(())
}
