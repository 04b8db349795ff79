//! Generates a synthetic multi-task bundle, saves it, and reloads it.
//!
//! cargo run --release --example generate_bundle -- [seed] [path]

use mixbil::data::{generate, load_bundle, save_bundle, GenConfig};

fn main() -> mixbil::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let path = args.next().unwrap_or_else(|| "bundle.json".into());

    let cfg = GenConfig {
        seed,
        ..GenConfig::default()
    };
    let bundle = generate(&cfg)?;
    let sizes: Vec<usize> = bundle.oracle_groups().iter().map(Vec::len).collect();
    println!(
        "d={} L={} T={} group sizes {:?}",
        bundle.d(),
        bundle.groups(),
        bundle.len(),
        sizes
    );

    let active: Vec<usize> = bundle
        .tasks
        .iter()
        .map(|t| t.w_star.iter().filter(|v| **v != 0.0).count())
        .collect();
    println!("nonzeros per oracle regressor: {active:?}");

    save_bundle(&bundle, &path)?;
    let back = load_bundle(&path)?;
    assert_eq!(back.labels, bundle.labels);
    println!("saved and reloaded {path}");
    Ok(())
}
