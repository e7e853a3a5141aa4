//! Command-line surface. Usage errors (unknown flags, malformed config) exit
//! with status 2, run-time failures with status 1.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::error::{Result, SivError};
use crate::forward::{FlowState, Trajectory};
use crate::harness::{
    epsilon_csv, generate_truth, integrate_truth, initial_condition, slopes_csv, stability_sweep, sweep_csv,
    trace_csv, twin_experiment_resume, ExperimentConfig,
};
use crate::recovery::{cone_manifest, Interpolation, ProbeReport};
use crate::snapshot::{KeyValues, Snapshot};
use crate::verify::{
    energy_refinement, gradient_check, lipschitz_probe, observed_orders, recovery_consistency, select_cone,
    self_test, AdvectedScalarCase, GradientCheckConfig,
};

#[derive(Parser, Debug)]
#[command(name = "siv", version, about = "Scalar image velocimetry by adjoint optimisation")]
pub struct Cli {
    /// Flat key=value experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "siv-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InterpArg {
    Bilinear,
    Cubic,
}

impl From<InterpArg> for Interpolation {
    fn from(a: InterpArg) -> Self {
        match a {
            InterpArg::Bilinear => Interpolation::Bilinear,
            InterpArg::Cubic => Interpolation::Cubic,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Random truth: SIV2 snapshots under <out>/truth.
    GenerateTruth,
    /// Twin-experiment reconstruction; writes epsilon.csv and trace.csv.
    Reconstruct {
        /// Truth directory from generate-truth (generated in memory if absent).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Continue from the per-segment checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Perturbation sweep; writes sweep.csv and slopes.csv.
    StabilitySweep,
    /// Local stream-function recovery on a Taylor-Green-advected scalar.
    LocalRecover {
        #[arg(long, value_enum, default_value = "cubic")]
        interp: InterpArg,
    },
    /// Adjoint gradient against central finite differences.
    GradientCheck,
    /// Analytic self-test suite.
    Verify,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("siv: {e}");
            return 2;
        }
    };
    match dispatch(&cli, &cfg) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("siv: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<bool> {
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::GenerateTruth => write_truth(cfg, &cli.out.join("truth")).map(|_| true),
        Command::Reconstruct { truth, resume } => reconstruct(cfg, truth.as_deref(), &cli.out, *resume).map(|_| true),
        Command::StabilitySweep => sweep(cfg, &cli.out).map(|_| true),
        Command::LocalRecover { interp } => local_recover(&cli.out, (*interp).into()).map(|_| true),
        Command::GradientCheck => gradient(cfg, &cli.out),
        Command::Verify => verify(),
    }
}

fn rec_name(i: usize) -> String {
    format!("rec_{i:05}.siv2")
}

/// Writes the truth: config, manifest, every truncated step, and strided
/// full-resolution snapshots.
pub fn write_truth(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    cfg.to_key_values().write(&dir.join("config.txt"))?;
    let rec = cfg.rec_size();
    let observed = integrate_truth(cfg, initial_condition(cfg)?, |i, s| {
        if i % cfg.snapshot_stride == 0 {
            Snapshot::from_spectral(s.time, &[&s.ux, &s.uy, &s.phi]).write(&dir.join(format!("full_{i:05}.siv2")))?;
        }
        let t = s.truncate(rec)?;
        Snapshot::from_spectral(t.time, &[&t.ux, &t.uy, &t.phi]).write(&dir.join(rec_name(i)))
    })?;
    let mut m = KeyValues::default();
    m.set("kind", "truth");
    m.set("steps", observed.len() - 1);
    m.set("dt", cfg.dt);
    m.set("n_truth", cfg.n_truth);
    m.set("n_rec", cfg.n_rec);
    m.set("snapshot_stride", cfg.snapshot_stride);
    m.set("fields", "ux,uy,phi");
    m.write(&dir.join("manifest.txt"))?;
    info!("truth written to {}", dir.display());
    Ok(())
}

/// Reads the truncated truth trajectory written by [`write_truth`].
pub fn read_truth(dir: &Path) -> Result<(ExperimentConfig, Trajectory)> {
    let cfg = ExperimentConfig::read(&dir.join("config.txt"))?;
    let m = KeyValues::read(&dir.join("manifest.txt"))?;
    let steps: usize = m.require("steps")?;
    let states = (0..=steps)
        .map(|i| {
            let snap = Snapshot::read(&dir.join(rec_name(i)))?;
            let mut f = snap.to_spectral().into_iter();
            match (f.next(), f.next(), f.next()) {
                (Some(ux), Some(uy), Some(phi)) => Ok(FlowState { ux, uy, phi, time: snap.time }),
                _ => Err(SivError::Snapshot { path: dir.join(rec_name(i)), reason: "expected 3 fields".into() }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cfg, Trajectory::new(m.require("dt")?, states)?))
}

fn control_name(i: usize) -> String {
    format!("control_{i:03}.siv2")
}

fn reconstruct(cfg: &ExperimentConfig, truth_dir: Option<&Path>, out: &Path, resume: bool) -> Result<()> {
    let observed = match truth_dir {
        Some(dir) => {
            let (truth_cfg, traj) = read_truth(dir)?;
            if truth_cfg.n_rec != cfg.n_rec || truth_cfg.dt != cfg.dt || truth_cfg.t_end != cfg.t_end {
                return Err(SivError::config("truth was generated with a different n_rec, dt or T"));
            }
            traj
        }
        None => generate_truth(cfg)?.observed,
    };
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let mut done = Vec::new();
    if resume {
        while let Ok(snap) = Snapshot::read(&ckpt.join(control_name(done.len()))) {
            let mut f = snap.to_spectral().into_iter();
            match (f.next(), f.next(), f.next()) {
                (Some(ux), Some(uy), Some(phi)) => done.push(crate::forward::ControlVector { ux, uy, phi }),
                _ => break,
            }
        }
        info!("resuming after {} completed segments", done.len());
    } else {
        // stale checkpoints from an earlier run must not leak into this one
        for i in 0.. {
            let p = ckpt.join(control_name(i));
            if fs::remove_file(&p).is_err() {
                break;
            }
        }
    }
    let first_new = done.len();
    let trace_path = out.join("trace.csv");
    if !resume || !trace_path.exists() {
        fs::write(&trace_path, trace_csv(0, &[]))?;
    }
    let twin = twin_experiment_resume(cfg, &observed, done, |i, result, control| {
        let t0 = i as f64 * cfg.tau;
        Snapshot::from_spectral(t0, &[&control.ux, &control.uy, &control.phi]).write(&ckpt.join(control_name(i)))?;
        let rows: String = trace_csv(i, std::slice::from_ref(result)).lines().skip(1).map(|l| format!("{l}\n")).collect();
        let mut text = fs::read_to_string(&trace_path)?;
        text.push_str(&rows);
        fs::write(&trace_path, text)?;
        Ok(())
    })?;
    fs::write(out.join("epsilon.csv"), epsilon_csv(&twin.epsilon))?;
    let mut m = cfg.to_key_values();
    m.set("segments_resumed", first_new);
    m.set("first_segment_mean_epsilon", twin.segment_mean(cfg, 0));
    m.set("last_segment_mean_epsilon", twin.segment_mean(cfg, cfg.segment_count() - 1));
    fs::write(out.join("reconstruct_manifest.txt"), m.render())?;
    println!(
        "epsilon: first segment {:.4e}, last segment {:.4e}",
        twin.segment_mean(cfg, 0),
        twin.segment_mean(cfg, cfg.segment_count() - 1)
    );
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = stability_sweep(cfg)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&outcome.records))?;
    fs::write(out.join("slopes.csv"), slopes_csv(&outcome.fits))?;
    for (delta, err) in &outcome.failures {
        eprintln!("siv: delta {delta:e} failed: {err}");
    }
    print!("{}", sweep_csv(&outcome.records));
    print!("{}", slopes_csv(&outcome.fits));
    Ok(())
}

fn local_recover(out: &Path, scheme: Interpolation) -> Result<()> {
    let ns = [64, 128, 256];
    let case = AdvectedScalarCase::standard(5)?;
    let spec = select_cone(&case, 64, &ns)?;
    fs::write(out.join("cone.txt"), cone_manifest(&spec.on(64)?))?;

    let rows = recovery_consistency(&case, &spec, &ns, scheme)?;
    let orders = observed_orders(&rows.iter().map(|r| r.l2_error).collect::<Vec<_>>());
    let mut csv = String::from("n,l2_error,max_error,points,flagged\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:e},{:e},{},{}", r.n, r.l2_error, r.max_error, r.points, r.flagged);
    }
    fs::write(out.join("consistency.csv"), &csv)?;
    print!("{csv}");
    println!("observed orders: {orders:.2?}");

    let probe_case = AdvectedScalarCase::probe(5)?;
    let probe_spec = select_cone(&probe_case, 64, &[64])?;
    let reports = lipschitz_probe(&probe_case, &probe_spec, 64, &[1e-4, 1e-3, 1e-2], scheme)?;
    let mut csv = format!("{}\n", ProbeReport::CSV_HEADER);
    for r in &reports {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    fs::write(out.join("probe.csv"), &csv)?;
    print!("{csv}");

    let energy = energy_refinement(&ns, scheme)?;
    let mut csv = String::from("n,ratio,gronwall_bound,f_norm,solution_error\n");
    for e in &energy {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e}",
            e.n, e.check.ratio, e.check.gronwall_bound, e.check.f_norm, e.solution_error
        );
    }
    fs::write(out.join("energy.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn gradient(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let gc = GradientCheckConfig {
        n: cfg.n_rec,
        tau: cfg.tau,
        nu: cfg.nu,
        lambda: cfg.lambda,
        seed: cfg.seed,
        ..Default::default()
    };
    let rows = gradient_check(&gc)?;
    let mut csv = String::from("dt,direction,adjoint,finite_difference,rel_error\n");
    for r in &rows {
        let _ = writeln!(csv, "{:e},{},{:e},{:e},{:e}", r.dt, r.direction, r.adjoint, r.finite_difference, r.rel_error);
    }
    fs::write(out.join("gradient_check.csv"), &csv)?;
    print!("{csv}");
    Ok(rows.iter().all(|r| r.rel_error <= 1e-2))
}

fn verify() -> Result<bool> {
    let mut all = true;
    for o in self_test()? {
        println!("{} {:<24} {:.3e} ({})", if o.passed { "PASS" } else { "FAIL" }, o.name, o.value, o.requirement);
        all &= o.passed;
    }
    Ok(all)
}
