//! Experiments with known answers, shared by the `verify` command, the
//! examples, and the test suites.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::gradient;
use crate::error::{Result, SivError};
use crate::forward::{forward_cost, run_forward, ControlVector, FlowState, Integrator, SegmentConfig};
use crate::harness::band_field;
use crate::optimizer::{brent_minimize, OptimizerConfig};
use crate::recovery::{
    energy_check, recover, stability_probe, ConeRegion, EnergyCheck, Interpolation, ProbeReport, ScalarWindow,
    TransportProblem,
};
use crate::spectral::{divergence_max, leray_project, GridSize, PhysicalField, SpectralField};

fn grid(n: usize) -> Result<GridSize> {
    GridSize::new(n)
}

/// Taylor-Green velocity `A (sin x cos y, -cos x sin y)` with zero scalar.
pub fn taylor_green(size: GridSize, amplitude: f64) -> FlowState {
    FlowState {
        ux: SpectralField::from_fn(size, |x, y| amplitude * x.sin() * y.cos()),
        uy: SpectralField::from_fn(size, |x, y| -amplitude * x.cos() * y.sin()),
        phi: SpectralField::zeros(size),
        time: 0.0,
    }
}

/// Taylor-Green vortex carried by the uniform stream `u0`:
/// `u0 + A e^{-2νt} (sin ξ cos η, -cos ξ sin η)` with `(ξ, η) = (x, y) - u0 t`.
/// An exact Navier-Stokes solution whose advection term does not vanish.
pub fn translated_taylor_green(size: GridSize, u0: (f64, f64), amplitude: f64, nu: f64, t: f64) -> FlowState {
    let a = amplitude * (-2.0 * nu * t).exp();
    let (sx, sy) = (u0.0 * t, u0.1 * t);
    FlowState {
        ux: SpectralField::from_fn(size, |x, y| u0.0 + a * (x - sx).sin() * (y - sy).cos()),
        uy: SpectralField::from_fn(size, |x, y| u0.1 - a * (x - sx).cos() * (y - sy).sin()),
        phi: SpectralField::zeros(size),
        time: t,
    }
}

fn integrate(initial: FlowState, cfg: SegmentConfig, every: usize, mut f: impl FnMut(&FlowState)) -> Result<FlowState> {
    let mut it = Integrator::new(initial, cfg);
    f(it.state());
    for i in 1..=cfg.steps() {
        it.advance()?;
        if i % every == 0 {
            f(it.state());
        }
    }
    Ok(it.into_state())
}

/// Kinetic energy of the Taylor-Green vortex sampled every `every` steps.
pub fn taylor_green_energy(n: usize, dt: f64, nu: f64, t_end: f64, every: usize) -> Result<Vec<(f64, f64)>> {
    let size = grid(n)?;
    let cfg = SegmentConfig::new(0.0, t_end, dt, nu, 0.0, size)?;
    let mut out = Vec::new();
    integrate(taylor_green(size, 1.0), cfg, every, |s| out.push((s.time, s.kinetic_energy())))?;
    Ok(out)
}

/// Amplitude of the scalar mode `cos(kx)` diffusing in a fluid at rest.
pub fn scalar_mode_decay(n: usize, dt: f64, lambda: f64, k: i64, t_end: f64, every: usize) -> Result<Vec<(f64, f64)>> {
    let size = grid(n)?;
    let cfg = SegmentConfig::new(0.0, t_end, dt, 0.0, lambda, size)?;
    let mut init = FlowState::zeros(size, 0.0);
    init.phi = SpectralField::from_fn(size, |x, _| (k as f64 * x).cos());
    let mut out = Vec::new();
    integrate(init, cfg, every, |s| out.push((s.time, 2.0 * s.phi.mode(k, 0).re)))?;
    Ok(out)
}

/// Relative L² velocity error against the translated Taylor-Green vortex at
/// `t_end`.
pub fn translated_taylor_green_error(n: usize, dt: f64, nu: f64, t_end: f64, u0: (f64, f64)) -> Result<f64> {
    let size = grid(n)?;
    let cfg = SegmentConfig::new(0.0, t_end, dt, nu, 0.0, size)?;
    let end = integrate(translated_taylor_green(size, u0, 1.0, nu, 0.0), cfg, usize::MAX, |_| {})?;
    let exact = translated_taylor_green(size, u0, 1.0, nu, t_end);
    Ok((crate::forward::velocity_distance_sq(&end, &exact) / exact.velocity_norm_sq()).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheckRow {
    pub dt: f64,
    pub direction: usize,
    /// `⟨∇J, d⟩` from the adjoint.
    pub adjoint: f64,
    /// `(J(w + εd) - J(w - εd)) / 2ε`.
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckConfig {
    pub n: usize,
    pub tau: f64,
    pub dts: Vec<f64>,
    pub directions: usize,
    pub nu: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Finite-difference step along unit-norm directions.
    pub epsilon: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            n: 64,
            tau: 0.08,
            dts: vec![1e-3, 5e-4, 2.5e-4],
            directions: 5,
            nu: 1e-3,
            lambda: 2e-3,
            seed: 11,
            epsilon: 1e-5,
        }
    }
}

fn random_control(size: GridSize, rng: &mut ChaCha8Rng) -> ControlVector {
    let mut c = ControlVector {
        ux: band_field(size, 4.0, 1.0, 12.0, rng),
        uy: band_field(size, 4.0, 1.0, 12.0, rng),
        phi: band_field(size, 4.0, 1.0, 12.0, rng),
    };
    c.project();
    let s = 1.0 / c.norm();
    c.scale(s);
    c
}

/// Compares adjoint directional derivatives with central differences for a
/// random control, random truth, and random unit directions.
pub fn gradient_check(cfg: &GradientCheckConfig) -> Result<Vec<GradientCheckRow>> {
    let size = grid(cfg.n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // controls of order-one RMS size
    let mut w = random_control(size, &mut rng);
    w.scale(2.0 * PI);
    let mut truth = random_control(size, &mut rng);
    truth.scale(2.0 * PI);
    let dirs: Vec<ControlVector> = (0..cfg.directions).map(|_| random_control(size, &mut rng)).collect();
    let mut rows = Vec::new();
    for &dt in &cfg.dts {
        let seg = SegmentConfig::new(0.0, cfg.tau, dt, cfg.nu, cfg.lambda, size)?;
        let meas = run_forward(&truth, &seg)?;
        let (g, _) = gradient(&w, &seg, &meas)?;
        for (k, d) in dirs.iter().enumerate() {
            let mut plus = w.clone();
            plus.axpy(cfg.epsilon, d);
            let mut minus = w.clone();
            minus.axpy(-cfg.epsilon, d);
            let fd = (forward_cost(&plus, &seg, &meas)? - forward_cost(&minus, &seg, &meas)?) / (2.0 * cfg.epsilon);
            let ad = g.dot(d);
            rows.push(GradientCheckRow {
                dt,
                direction: k,
                adjoint: ad,
                finite_difference: fd,
                rel_error: (ad - fd).abs() / fd.abs().max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(rows)
}

/// Scalar advected by a decaying Taylor-Green vortex, whose stream function
/// `Θ = A(t) sin x sin y` is known exactly.
#[derive(Clone, Debug)]
pub struct AdvectedScalarCase {
    pub lambda: f64,
    /// Snapshots on the generation grid, centred on `time`.
    pub window: ScalarWindow,
    pub time: f64,
    /// Vortex amplitude at `time`.
    pub amplitude: f64,
}

/// Initial scalar of the advected case.
pub fn advected_scalar_initial(x: f64, y: f64) -> f64 {
    y.sin() + 0.4 * x.cos() + 0.2 * (x + 2.0 * y + 0.3).sin()
}

/// Advects [`advected_scalar_initial`] with the Taylor-Green vortex on an
/// `n`² grid up to `t_centre`, then records `count` snapshots `dt_window`
/// apart. The first fine step (forward Euler) is discarded so every recorded
/// increment comes from an AB2 step.
pub fn advected_scalar_case(
    n: usize,
    t_centre: f64,
    dt: f64,
    dt_window: f64,
    count: usize,
    nu: f64,
    lambda: f64,
) -> Result<AdvectedScalarCase> {
    let size = grid(n)?;
    if count < 3 || count % 2 == 0 {
        return Err(SivError::config("window needs an odd count >= 3"));
    }
    let mut init = taylor_green(size, 1.0);
    init.phi = SpectralField::from_fn(size, advected_scalar_initial);
    let half = (count / 2) as f64;
    let t_start = t_centre - (half + 1.0) * dt_window;
    if t_start <= 0.0 {
        return Err(SivError::config("t_centre too small for the window"));
    }
    // t_start is rarely a multiple of dt: integrate to the last multiple and
    // close the gap with one short step
    let whole = (t_start / dt).floor();
    let mut state = init;
    if whole >= 1.0 {
        state = integrate(state, SegmentConfig::new(0.0, whole * dt, dt, nu, lambda, size)?, usize::MAX, |_| {})?;
    }
    let gap = t_start - whole * dt;
    if gap > 1e-14 {
        state = integrate(state, SegmentConfig::new(0.0, gap, gap, nu, lambda, size)?, usize::MAX, |_| {})?;
    }
    let fine = SegmentConfig::new(0.0, (count as f64) * dt_window, dt_window, nu, lambda, size)?;
    let mut snaps = Vec::with_capacity(count + 1);
    integrate(state, fine, 1, |s| snaps.push(s.clone()))?;
    let centre = &snaps[1 + count / 2];
    let pattern = SpectralField::from_fn(size, |x, y| x.sin() * y.cos());
    let amplitude = centre.ux.inner_product(&pattern)? / pattern.l2_norm_sq();
    Ok(AdvectedScalarCase {
        lambda,
        window: ScalarWindow::new(dt_window, snaps[1..].iter().map(|s| s.phi.clone()).collect())?,
        time: centre.time,
        amplitude,
    })
}

impl AdvectedScalarCase {
    /// Default case: generated on 256², centred at `t = 0.5`.
    pub fn standard(count: usize) -> Result<Self> {
        advected_scalar_case(256, 0.5, 1e-3, 1e-5, count, 1e-3, 2e-3)
    }

    /// Case for the stability probe, centred at `t = 0.5` with snapshots
    /// 1e-2 apart. The discrete H⁴ norm takes up to four time differences,
    /// which amplify rounding by `dt⁻⁴`, so the fine window of
    /// [`Self::standard`] is unusable there.
    pub fn probe(count: usize) -> Result<Self> {
        advected_scalar_case(128, 0.5, 1e-3, 1e-2, count, 1e-3, 2e-3)
    }

    pub fn theta(&self, x: f64, y: f64) -> f64 {
        self.amplitude * x.sin() * y.sin()
    }

    pub fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        (self.amplitude * x.sin() * y.cos(), -self.amplitude * x.cos() * y.sin())
    }

    /// The window truncated to an `n`² grid.
    pub fn window_at(&self, n: usize) -> Result<ScalarWindow> {
        let size = grid(n)?;
        ScalarWindow::new(
            self.window.dt,
            self.window.snapshots.iter().map(|s| s.truncate(size)).collect::<Result<_>>()?,
        )
    }

    /// Exact Θ on column `line_ix` of an `n`² grid.
    pub fn line_theta(&self, n: usize, line_ix: usize) -> Result<Vec<f64>> {
        let size = grid(n)?;
        Ok((0..n).map(|j| self.theta(size.node(line_ix), size.node(j))).collect())
    }
}

/// Cone apex and geometry expressed on the coarsest grid of a refinement
/// study, so that it maps onto the same physical region on finer grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSpec {
    pub base_n: usize,
    pub line_ix: usize,
    pub y0_ix: usize,
    pub slope: f64,
    pub delta: f64,
}

impl ConeSpec {
    pub fn on(&self, n: usize) -> Result<ConeRegion> {
        let size = grid(n)?;
        let r = n / self.base_n;
        if r == 0 || n % self.base_n != 0 {
            return Err(SivError::config(format!("grid {n} is not a refinement of {}", self.base_n)));
        }
        ConeRegion::new(size, self.line_ix * r, self.y0_ix * r, self.slope, self.delta)
    }
}

fn problem_at(case: &AdvectedScalarCase, spec: &ConeSpec, n: usize) -> Result<TransportProblem> {
    let cone = spec.on(n)?;
    crate::recovery::build_transport(
        &case.window_at(n)?,
        case.lambda,
        cone.line_ix,
        cone.y0_ix,
        &case.line_theta(n, cone.line_ix)?,
        None,
    )
}

/// Picks the apex on the `base_n` grid whose admissible cone is widest, then
/// shrinks it until it is admissible on every grid in `ns`.
pub fn select_cone(case: &AdvectedScalarCase, base_n: usize, ns: &[usize]) -> Result<ConeSpec> {
    let size = grid(base_n)?;
    let window = case.window_at(base_n)?;
    let zero_line = vec![0.0; base_n];
    let mut best: Option<ConeSpec> = None;
    // candidate apices on a coarse lattice keep the search cheap
    let stride = (base_n / 16).max(1);
    for line_ix in (0..base_n).step_by(stride) {
        for y0_ix in (0..base_n).step_by(stride) {
            let Ok(p) = crate::recovery::build_transport(&window, case.lambda, line_ix, y0_ix, &zero_line, None) else {
                continue;
            };
            let slope = p.default_slope();
            let delta = p.max_admissible_delta(slope);
            if best.as_ref().map_or(true, |b| delta > b.delta) {
                best = Some(ConeSpec { base_n, line_ix, y0_ix, slope, delta });
            }
        }
    }
    let mut spec = best.ok_or_else(|| SivError::Transport("no admissible apex".into()))?;
    let h = size.spacing();
    spec.delta = ((0.8 * spec.delta / h).floor() * h).max(h);
    loop {
        let ok = ns.iter().all(|&n| {
            problem_at(case, &spec, n).and_then(|p| spec.on(n).and_then(|c| p.check_cone(&c))).is_ok()
        });
        if ok {
            return Ok(spec);
        }
        if spec.delta <= 2.0 * h {
            return Err(SivError::Transport("no cone admissible on every grid".into()));
        }
        spec.delta -= h;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    /// `‖u_rec - u‖_{L²(cone)}`.
    pub l2_error: f64,
    pub max_error: f64,
    pub points: usize,
    pub flagged: usize,
}

/// Recovers the velocity on the same physical cone for each grid in `ns`
/// and measures the error against the exact vortex.
pub fn recovery_consistency(
    case: &AdvectedScalarCase,
    spec: &ConeSpec,
    ns: &[usize],
    scheme: Interpolation,
) -> Result<Vec<ConsistencyRow>> {
    ns.iter()
        .map(|&n| {
            let cone = spec.on(n)?;
            let rec = recover(
                &case.window_at(n)?,
                case.lambda,
                &cone,
                &case.line_theta(n, cone.line_ix)?,
                None,
                scheme,
            )?;
            let h = cone.size.spacing();
            let (mut sum, mut max, mut points) = (0.0, 0.0f64, 0);
            for (c, m, ux) in rec.velocity.ux.iter() {
                let Some(uy) = rec.velocity.uy.get(c, m) else { continue };
                let (ex, ey) = case.velocity(cone.x_sigma() + c as f64 * h, cone.y0() + m as f64 * h);
                let e2 = (ux - ex).powi(2) + (uy - ey).powi(2);
                sum += e2;
                max = max.max(e2.sqrt());
                points += 1;
            }
            Ok(ConsistencyRow { n, l2_error: (sum * h * h).sqrt(), max_error: max, points, flagged: rec.solution.flagged })
        })
        .collect()
}

/// Observed convergence orders `log2(e_n / e_{2n})` between successive rows.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Runs the stability probe with `ψ̃ = ψ + δ cos(2x + y)` on a fixed cone.
pub fn lipschitz_probe(
    case: &AdvectedScalarCase,
    spec: &ConeSpec,
    n: usize,
    deltas: &[f64],
    scheme: Interpolation,
) -> Result<Vec<ProbeReport>> {
    let cone = spec.on(n)?;
    let window = case.window_at(n)?;
    let line = case.line_theta(n, cone.line_ix)?;
    let base = problem_at(case, spec, n)?;
    let mode = SpectralField::from_fn(cone.size, |x, y| (2.0 * x + y).cos());
    deltas
        .iter()
        .map(|&d| {
            let tilde = window.perturbed(&mode.scaled(d));
            stability_probe(&window, &tilde, case.lambda, &cone, &line, Some(base.epsilon_floor), scheme, d)
        })
        .collect()
}

/// Coefficient of the manufactured transport problem.
pub fn manufactured_beta(x: f64, y: f64) -> f64 {
    0.5 * x.cos() * (y + 0.2).sin()
}

fn manufactured_s(x: f64, y: f64) -> (f64, f64, f64) {
    // s, ∂x s, ∂y s
    let s = (y - 0.3).cos() + 0.5 * x.sin() * y.cos();
    let sx = 0.5 * x.cos() * y.cos();
    let sy = -(y - 0.3).sin() - 0.5 * x.sin() * y.sin();
    (s, sx, sy)
}

/// `Θ_m = (x - x_Σ) s(x, y)` with `x - x_Σ` wrapped to `(-π, π]`.
pub fn manufactured_theta(x_sigma: f64, x: f64, y: f64) -> f64 {
    let d = wrap(x - x_sigma);
    d * manufactured_s(x, y).0
}

fn wrap(d: f64) -> f64 {
    let mut d = (d + PI).rem_euclid(2.0 * PI) - PI;
    if d == -PI {
        d = PI;
    }
    d
}

/// Manufactured transport problem with zero line data on an `n`² grid, apex
/// `(-π/2, 0)`, and the matching cone of slope 1.5 and width 1.
pub fn manufactured_problem(n: usize) -> Result<(TransportProblem, ConeRegion)> {
    let size = grid(n)?;
    let (line_ix, y0_ix) = (n / 4, n / 2);
    let xs = size.node(line_ix);
    let beta = PhysicalField::from_fn(size, manufactured_beta);
    let f = PhysicalField::from_fn(size, |x, y| {
        let d = wrap(x - xs);
        let (s, sx, sy) = manufactured_s(x, y);
        s + d * sx + manufactured_beta(x, y) * d * sy
    });
    let problem = TransportProblem::from_parts(beta, f, line_ix, y0_ix, vec![0.0; n])?;
    let cone = ConeRegion::new(size, line_ix, y0_ix, 1.5, 1.0)?;
    Ok((problem, cone))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRow {
    pub n: usize,
    pub check: EnergyCheck,
    /// `max |Θ - Θ_m|` on the cone.
    pub solution_error: f64,
}

/// Energy constant of the manufactured problem on each grid.
pub fn energy_refinement(ns: &[usize], scheme: Interpolation) -> Result<Vec<EnergyRow>> {
    ns.iter()
        .map(|&n| {
            let (problem, cone) = manufactured_problem(n)?;
            let check = energy_check(&problem, &cone, scheme)?;
            let sol = crate::recovery::solve_transport(&problem, &cone, scheme)?;
            let h = cone.size.spacing();
            let err = sol
                .theta
                .iter()
                .map(|(c, m, v)| {
                    (v - manufactured_theta(cone.x_sigma(), cone.x_sigma() + c as f64 * h, cone.y0() + m as f64 * h)).abs()
                })
                .fold(0.0, f64::max);
            Ok(EnergyRow { n, check, solution_error: err })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub requirement: String,
    pub passed: bool,
}

fn outcome(name: &'static str, value: f64, requirement: impl Into<String>, passed: bool) -> CheckOutcome {
    CheckOutcome { name, value, requirement: requirement.into(), passed }
}

/// Quick analytic self-test, small enough to run in seconds.
pub fn self_test() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let e = taylor_green_energy(32, 1e-3, 1e-2, 0.2, 200)?;
    let (t, last) = e[e.len() - 1];
    let rel = (last / (e[0].1 * (-4.0 * 1e-2 * t).exp()) - 1.0).abs();
    out.push(outcome("taylor_green_energy", rel, "< 1e-6", rel < 1e-6));

    let d = scalar_mode_decay(32, 1e-3, 1e-2, 4, 0.2, 200)?;
    let (t, amp) = d[d.len() - 1];
    let rel = (amp / (-16.0 * 1e-2 * t).exp() - 1.0).abs();
    out.push(outcome("scalar_mode_decay", rel, "< 1e-6", rel < 1e-6));

    let e1 = translated_taylor_green_error(32, 4e-3, 1e-2, 0.2, (1.0, 0.5))?;
    let e2 = translated_taylor_green_error(32, 2e-3, 1e-2, 0.2, (1.0, 0.5))?;
    let ratio = e1 / e2;
    out.push(outcome("time_order_ratio", ratio, "in [3.5, 4.5]", (3.5..=4.5).contains(&ratio)));

    let size = grid(32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ux = band_field(size, 4.0, 1.0, 8.0, &mut rng);
    let uy = band_field(size, 4.0, 1.0, 8.0, &mut rng);
    let (px, py) = leray_project(&ux, &uy)?;
    let (qx, qy) = leray_project(&px, &py)?;
    let idem = qx.sub(&px).max_abs().max(qy.sub(&py).max_abs());
    out.push(outcome("projection_idempotent", idem, "< 1e-14", idem < 1e-14));
    let div = divergence_max(&px, &py);
    out.push(outcome("projection_divergence", div, "< 1e-10", div < 1e-10));

    let phys = ux.to_physical();
    let h = size.spacing();
    let grid_sum: f64 = phys.values().iter().map(|v| v * v).sum::<f64>() * h * h;
    let parseval = (grid_sum / ux.l2_norm_sq() - 1.0).abs();
    out.push(outcome("parseval", parseval, "< 1e-12", parseval < 1e-12));

    let rows = gradient_check(&GradientCheckConfig {
        n: 32,
        tau: 0.02,
        dts: vec![1e-3],
        directions: 2,
        ..Default::default()
    })?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    out.push(outcome("adjoint_gradient", worst, "< 1e-2", worst < 1e-2));

    let line = brent_minimize(|a| (a - 2.0).powi(2), 4.0, 1.0, &OptimizerConfig::default());
    let err = (line.step - 2.0).abs();
    out.push(outcome("brent_quadratic", err, "< 1e-3 * 2", err < 2e-3));

    let (problem, cone) = manufactured_problem(64)?;
    let sol = crate::recovery::solve_transport(&problem, &cone, Interpolation::Cubic)?;
    let hc = cone.size.spacing();
    let worst = sol
        .theta
        .iter()
        .map(|(c, m, v)| (v - manufactured_theta(cone.x_sigma(), cone.x_sigma() + c as f64 * hc, cone.y0() + m as f64 * hc)).abs())
        .fold(0.0, f64::max);
    out.push(outcome("transport_manufactured", worst, "< 1e-4", worst < 1e-4));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translated_vortex_is_stationary_for_zero_stream() {
        let size = GridSize::new(16).unwrap();
        let a = translated_taylor_green(size, (0.0, 0.0), 1.0, 0.0, 0.7);
        let b = taylor_green(size, 1.0);
        assert!(crate::forward::velocity_distance_sq(&a, &b) < 1e-28);
    }

    #[test]
    fn manufactured_theta_vanishes_on_line() {
        let (p, cone) = manufactured_problem(32).unwrap();
        assert!(p.boundary_theta.iter().all(|v| *v == 0.0));
        assert_eq!(manufactured_theta(cone.x_sigma(), cone.x_sigma(), 0.4), 0.0);
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn self_test_passes() {
        for o in self_test().unwrap() {
            assert!(o.passed, "{o:?}");
        }
    }
}
