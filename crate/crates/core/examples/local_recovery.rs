//! Local stream-function recovery on a scalar advected by a Taylor-Green
//! vortex: convergence of the recovered velocity, the Lipschitz probe, and
//! the transport energy constant.
//!
//! Usage: `cargo run --example local_recovery [bilinear|cubic]`

use siv::recovery::Interpolation;
use siv::verify::{
    energy_refinement, lipschitz_probe, observed_orders, recovery_consistency, select_cone, AdvectedScalarCase,
};

fn main() -> siv::Result<()> {
    let scheme = match std::env::args().nth(1).as_deref() {
        Some("bilinear") => Interpolation::Bilinear,
        _ => Interpolation::Cubic,
    };
    let ns = [64, 128, 256];
    let case = AdvectedScalarCase::standard(5)?;
    let spec = select_cone(&case, 64, &ns)?;
    println!("t = {:.5}, vortex amplitude {:.6}", case.time, case.amplitude);
    println!("cone: {spec:?}");

    let rows = recovery_consistency(&case, &spec, &ns, scheme)?;
    for r in &rows {
        println!("n = {:>3}: L2 error {:.3e}, max {:.3e}, {} points", r.n, r.l2_error, r.max_error, r.points);
    }
    let orders = observed_orders(&rows.iter().map(|r| r.l2_error).collect::<Vec<_>>());
    println!("observed orders {orders:.2?}");

    let probe = AdvectedScalarCase::probe(5)?;
    let probe_spec = select_cone(&probe, 64, &[64])?;
    for r in lipschitz_probe(&probe, &probe_spec, 64, &[1e-4, 1e-3, 1e-2], scheme)? {
        println!(
            "delta {:e}: |u - u~| {:.3e}, |psi - psi~|_H4 {:.3e}, ratio {:.4e}",
            r.delta, r.l2_u_diff, r.h4_psi_diff, r.ratio_lipschitz
        );
    }
    for e in energy_refinement(&ns, scheme)? {
        println!(
            "n = {:>3}: energy ratio {:.4}, Gronwall bound {:.3}, solution error {:.2e}",
            e.n, e.check.ratio, e.check.gronwall_bound, e.solution_error
        );
    }
    Ok(())
}
