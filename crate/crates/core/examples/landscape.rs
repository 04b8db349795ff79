//! Emits the two-feature toy landscape (G and G + φ/ε) as CSV and reports
//! where each surface is minimized.
//!
//! cargo run --release --example landscape -- [eps] [resolution] [path]

use std::fs::File;
use std::io::BufWriter;

use mixbil::verify::{landscape_grid, ToyObjective};

fn main() -> mixbil::Result<()> {
    let mut args = std::env::args().skip(1);
    let eps: f64 = args.next().map_or(1e-2, |s| s.parse().expect("eps"));
    let resolution: usize = args.next().map_or(101, |s| s.parse().expect("resolution"));
    let path = args.next().unwrap_or_else(|| "landscape.csv".into());

    let toy = ToyObjective::standard()?;
    let land = landscape_grid(&toy, eps, resolution)?;
    let g = land.argmin_g();
    let p = land.argmin_pen();
    println!("oracle vertices (t11, t21): {:?}", toy.oracle_vertices());
    println!(
        "argmin G          ({:.3}, {:.3})  G = {:.6}",
        g.t11, g.t21, g.g
    );
    println!(
        "argmin G + phi/eps ({:.3}, {:.3})  G = {:.6}",
        p.t11, p.t21, p.g
    );
    println!(
        "estimated Lipschitz constant of G: {:.4}",
        land.lipschitz_estimate()
    );

    let file = File::create(&path).map_err(|e| mixbil::Error::Io {
        path: path.clone().into(),
        source: e,
    })?;
    land.write_csv(BufWriter::new(file))
        .map_err(|e| mixbil::Error::Io {
            path: path.clone().into(),
            source: e,
        })?;
    println!("wrote {path}");
    Ok(())
}
