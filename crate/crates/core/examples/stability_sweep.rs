//! Perturbation stability sweep: perturb the initial velocity by a relative
//! δ, reconstruct both runs, and compare the scalar and velocity differences.
//!
//! Usage: `cargo run --example stability_sweep [config-file]`
//! (set `SIV_THREADS` to run several δ at once).

use std::time::Instant;

use siv::harness::{slopes_csv, stability_sweep, sweep_csv, ExperimentConfig};

fn main() -> siv::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::read(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let start = Instant::now();
    let out = stability_sweep(&cfg)?;
    print!("{}", sweep_csv(&out.records));
    print!("{}", slopes_csv(&out.fits));
    for (delta, err) in &out.failures {
        println!("delta {delta:e} failed: {err}");
    }
    println!("baseline window epsilon {:.4e}", out.baseline_epsilon);
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
