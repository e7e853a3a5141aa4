//! The optimiser on its own: Brent's line search on a quartic, then
//! Polak-Ribiere CG on the Rosenbrock function.

use siv::optimizer::{brent_minimize, conjugate_gradient, OptimizerConfig};

fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        f += 100.0 * a * a + b * b;
        g[i] += -400.0 * x[i] * a - 2.0 * b;
        g[i + 1] += 200.0 * a;
    }
    (f, g)
}

fn main() -> siv::Result<()> {
    let quartic = |a: f64| (a - 1.3).powi(4) + 0.5 * (a - 1.3).powi(2);
    let line = brent_minimize(quartic, quartic(0.0), 1.0, &OptimizerConfig::default());
    println!(
        "quartic: step {:.6} (exact 1.3), {} evaluations, bracketed {}",
        line.step, line.evaluations, line.bracketed
    );

    let cfg = OptimizerConfig { rel_tol: 1e-12, max_cg_iters: 200, brent_tol: 1e-8, ..Default::default() };
    let res = conjugate_gradient(
        vec![-1.2, 1.0, -0.5, 0.8],
        |x: &Vec<f64>| Ok(rosenbrock(x)),
        |x: &Vec<f64>| Ok(rosenbrock(x).0),
        &cfg,
    )?;
    println!(
        "rosenbrock: J {:.3e} -> {:.3e} in {} iterations ({:?}), x = {:.5?}",
        res.cost_history[0], res.final_cost, res.iterations, res.status, res.control
    );
    Ok(())
}
