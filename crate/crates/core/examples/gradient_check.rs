//! Adjoint gradient against central finite differences, for five random
//! directions at three time steps.

use siv::verify::{gradient_check, GradientCheckConfig};

fn main() -> siv::Result<()> {
    let cfg = GradientCheckConfig::default();
    let rows = gradient_check(&cfg)?;
    println!("dt        dir  adjoint          finite diff      rel error");
    for r in &rows {
        println!(
            "{:.2e}  {}    {:+.8e}  {:+.8e}  {:.3e}",
            r.dt, r.direction, r.adjoint, r.finite_difference, r.rel_error
        );
    }
    for dt in &cfg.dts {
        let worst = rows.iter().filter(|r| r.dt == *dt).map(|r| r.rel_error).fold(0.0, f64::max);
        println!("dt = {dt:.2e}: worst {worst:.3e}");
    }
    Ok(())
}
