//! Analytic checks of the forward model: Taylor-Green energy decay, decay of
//! a single scalar mode, and the temporal order of the AB2/CN scheme.

use siv::verify::{scalar_mode_decay, taylor_green_energy, translated_taylor_green_error};

fn main() -> siv::Result<()> {
    let nu = 1e-3;
    let energy = taylor_green_energy(64, 1e-3, nu, 1.0, 100)?;
    let e0 = energy[0].1;
    println!("    t      E(t)/E(0)     exp(-4 nu t)   rel err");
    for (t, e) in &energy {
        let exact = (-4.0 * nu * t).exp();
        println!("{t:6.2}  {:.10}  {exact:.10}  {:.2e}", e / e0, (e / e0 / exact - 1.0).abs());
    }

    let lambda = 2e-3;
    let (t, amp) = *scalar_mode_decay(64, 1e-3, lambda, 4, 1.0, 1000)?.last().unwrap();
    println!("\ncos(4x) amplitude at t = {t:.2}: {amp:.10} (exact {:.10})", (-16.0 * lambda * t).exp());

    println!("\ntranslated vortex, U0 = (1, 0.5), nu = 1e-2, t = 0.5");
    let mut prev = None;
    for dt in [4e-3, 2e-3, 1e-3] {
        let err = translated_taylor_green_error(32, dt, 1e-2, 0.5, (1.0, 0.5))?;
        match prev {
            Some(p) => println!("dt = {dt:.0e}: rel error {err:.3e}, ratio {:.3}", p / err),
            None => println!("dt = {dt:.0e}: rel error {err:.3e}"),
        }
        prev = Some(err);
    }
    Ok(())
}
