//! Desk-scale twin experiment: generate a random truth, reconstruct the
//! velocity segment by segment from the scalar alone, and print the error.
//!
//! Usage: `cargo run --example twin_experiment [config-file]`

use std::time::Instant;

use siv::harness::{epsilon_csv, generate_truth, twin_experiment, ExperimentConfig};

fn main() -> siv::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::read(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let start = Instant::now();
    let truth = generate_truth(&cfg)?;
    println!("truth: {} steps on {}² in {:.1?}", cfg.steps(), cfg.n_truth, start.elapsed());

    let twin = twin_experiment(&cfg, &truth.observed)?;
    println!("segment  t0      mean eps    J0 -> J          iters");
    for (i, r) in twin.segments.iter().enumerate() {
        println!(
            "{i:>7}  {:.3}  {:.4e}  {:.3e} -> {:.3e}  {}",
            i as f64 * cfg.tau,
            twin.segment_mean(&cfg, i),
            r.cost_history[0],
            r.final_cost,
            r.iterations
        );
    }
    let first = twin.segment_mean(&cfg, 0);
    let last = twin.segment_mean(&cfg, cfg.segment_count() - 1);
    println!("last/first = {:.3e}, total {:.1?}", last / first, start.elapsed());
    std::fs::write("twin_epsilon.csv", epsilon_csv(&twin.epsilon))?;
    Ok(())
}
