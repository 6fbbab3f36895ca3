//! Write the synthetic 10 x 10-cell city layers to a directory.
//!
//! `cargo run -p resilience-core --example mini_city -- <dir> [seed]`

use std::path::PathBuf;

fn main() -> resilience_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "mini_city".into()));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));
    std::fs::create_dir_all(&dir)?;
    let city = resilience_core::synth::mini_city(seed);
    resilience_core::synth::write_mini_city(&city, &dir)?;
    println!("wrote {} cells of layers to {}", city.n_side * city.n_side, dir.display());
    Ok(())
}
