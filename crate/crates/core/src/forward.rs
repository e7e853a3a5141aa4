//! Coupled Navier-Stokes and passive-scalar integration, and the misfit
//! functional `J = ½ ∫ ‖φ - ψ‖² dt`.
//!
//! Advection is explicit (second-order Adams-Bashforth, forward Euler on the
//! first step of a trajectory) and diffusion is Crank-Nicolson. Pressure never
//! appears: the momentum tendency is Leray-projected, so the velocity stays
//! divergence-free to rounding.

use log::warn;

use crate::error::{Result, SivError};
use crate::spectral::{
    crank_nicolson_update, divergence_max, leray_project_in_place, GridSize, PhysicalField,
    SpectralField,
};

/// Parameters of one optimisation segment `[t0, t0 + tau]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentConfig {
    pub t0: f64,
    pub tau: f64,
    pub dt: f64,
    pub nu: f64,
    pub lambda: f64,
    pub n: GridSize,
}

impl SegmentConfig {
    pub fn new(t0: f64, tau: f64, dt: f64, nu: f64, lambda: f64, n: GridSize) -> Result<Self> {
        let cfg = SegmentConfig { t0, tau, dt, nu, lambda, n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.tau > 0.0) {
            return Err(SivError::config("dt and tau must be positive"));
        }
        if !(self.nu >= 0.0 && self.lambda >= 0.0) {
            return Err(SivError::config("nu and lambda must be non-negative"));
        }
        let ratio = self.tau / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(SivError::config(format!(
                "tau/dt = {ratio} is not a positive integer"
            )));
        }
        Ok(())
    }

    /// Number of time steps in the segment.
    pub fn steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.tau
    }

    /// Same parameters for the segment starting at `t0`.
    pub fn at(&self, t0: f64) -> SegmentConfig {
        SegmentConfig { t0, ..*self }
    }
}

/// Initial condition of a segment: divergence-free velocity and scalar.
/// Also serves as gradient and search direction in the optimiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVector {
    pub ux: SpectralField,
    pub uy: SpectralField,
    pub phi: SpectralField,
}

impl ControlVector {
    pub fn zeros(size: GridSize) -> Self {
        ControlVector {
            ux: SpectralField::zeros(size),
            uy: SpectralField::zeros(size),
            phi: SpectralField::zeros(size),
        }
    }

    /// Builds a control, projecting the velocity and dealiasing all parts.
    pub fn new(ux: SpectralField, uy: SpectralField, phi: SpectralField) -> Result<Self> {
        if ux.size() != uy.size() || ux.size() != phi.size() {
            return Err(SivError::SizeMismatch(ux.n(), phi.n()));
        }
        let mut c = ControlVector { ux, uy, phi };
        c.project();
        Ok(c)
    }

    pub fn size(&self) -> GridSize {
        self.phi.size()
    }

    /// Re-imposes the divergence-free and dealiasing constraints.
    pub fn project(&mut self) {
        self.ux.dealias();
        self.uy.dealias();
        self.phi.dealias();
        leray_project_in_place(&mut self.ux, &mut self.uy);
    }

    /// L² inner product summed over the three components.
    pub fn dot(&self, other: &ControlVector) -> f64 {
        self.ux.dot_unchecked(&other.ux)
            + self.uy.dot_unchecked(&other.uy)
            + self.phi.dot_unchecked(&other.phi)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, a: f64, x: &ControlVector) {
        self.ux.axpy(a, &x.ux);
        self.uy.axpy(a, &x.uy);
        self.phi.axpy(a, &x.phi);
    }

    pub fn scale(&mut self, a: f64) {
        self.ux.scale(a);
        self.uy.scale(a);
        self.phi.scale(a);
    }

    pub fn scaled(&self, a: f64) -> ControlVector {
        let mut c = self.clone();
        c.scale(a);
        c
    }

    pub fn is_finite(&self) -> bool {
        self.ux.is_finite() && self.uy.is_finite() && self.phi.is_finite()
    }

    pub fn to_state(&self, time: f64) -> FlowState {
        FlowState { ux: self.ux.clone(), uy: self.uy.clone(), phi: self.phi.clone(), time }
    }
}

/// Flow state `w = (u, φ)` at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub ux: SpectralField,
    pub uy: SpectralField,
    pub phi: SpectralField,
    pub time: f64,
}

impl FlowState {
    pub fn zeros(size: GridSize, time: f64) -> Self {
        ControlVector::zeros(size).to_state(time)
    }

    pub fn size(&self) -> GridSize {
        self.phi.size()
    }

    pub fn to_control(&self) -> ControlVector {
        ControlVector { ux: self.ux.clone(), uy: self.uy.clone(), phi: self.phi.clone() }
    }

    pub fn divergence_max(&self) -> f64 {
        divergence_max(&self.ux, &self.uy)
    }

    /// ‖u‖² = ‖u_x‖² + ‖u_y‖².
    pub fn velocity_norm_sq(&self) -> f64 {
        self.ux.l2_norm_sq() + self.uy.l2_norm_sq()
    }

    /// ½‖u‖².
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocity_norm_sq()
    }

    pub fn truncate(&self, dst: GridSize) -> Result<FlowState> {
        Ok(FlowState {
            ux: self.ux.truncate(dst)?,
            uy: self.uy.truncate(dst)?,
            phi: self.phi.truncate(dst)?,
            time: self.time,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.ux.is_finite() && self.uy.is_finite() && self.phi.is_finite()
    }
}

/// ‖(ax, ay) - (bx, by)‖² for two velocity fields.
pub fn velocity_distance_sq(a: &FlowState, b: &FlowState) -> f64 {
    a.ux.sub(&b.ux).l2_norm_sq() + a.uy.sub(&b.uy).l2_norm_sq()
}

/// Explicit advection tendencies evaluated at one state.
#[derive(Clone, Debug)]
pub struct Tendencies {
    /// `-P[(u·∇)u]`, dealiased.
    pub ux: SpectralField,
    pub uy: SpectralField,
    /// `-u·∇φ`, dealiased.
    pub phi: SpectralField,
    /// max |u| on the grid, for the CFL advisory.
    pub max_speed: f64,
}

/// Pseudospectral advection tendencies in convective form.
pub fn advection(state: &FlowState) -> Tendencies {
    let (u, v) = SpectralField::to_physical_pair(&state.ux, &state.uy);
    let (ux_x, ux_y) = SpectralField::to_physical_pair(&state.ux.dx(), &state.ux.dy());
    let (uy_x, uy_y) = SpectralField::to_physical_pair(&state.uy.dx(), &state.uy.dy());
    let (phi_x, phi_y) = SpectralField::to_physical_pair(&state.phi.dx(), &state.phi.dy());

    let size = state.size();
    let (uv, vv) = (u.values(), v.values());
    let mut nx = PhysicalField::zeros(size);
    let mut ny = PhysicalField::zeros(size);
    let mut nphi = PhysicalField::zeros(size);
    let mut max_speed: f64 = 0.0;
    {
        let (ax, ay) = (ux_x.values(), ux_y.values());
        let (bx, by) = (uy_x.values(), uy_y.values());
        let (px, py) = (phi_x.values(), phi_y.values());
        let nxv = nx.values_mut();
        for i in 0..size.len() {
            nxv[i] = -(uv[i] * ax[i] + vv[i] * ay[i]);
        }
        let nyv = ny.values_mut();
        for i in 0..size.len() {
            nyv[i] = -(uv[i] * bx[i] + vv[i] * by[i]);
        }
        let npv = nphi.values_mut();
        for i in 0..size.len() {
            npv[i] = -(uv[i] * px[i] + vv[i] * py[i]);
            max_speed = max_speed.max((uv[i] * uv[i] + vv[i] * vv[i]).sqrt());
        }
    }
    let (mut tx, mut ty) = SpectralField::from_physical_pair(&nx, &ny);
    let mut tphi = nphi.transform();
    tx.dealias();
    ty.dealias();
    tphi.dealias();
    leray_project_in_place(&mut tx, &mut ty);
    Tendencies { ux: tx, uy: ty, phi: tphi, max_speed }
}

/// Combines current and previous tendencies: AB2 when history exists,
/// forward Euler otherwise.
pub(crate) fn extrapolate(current: &SpectralField, previous: Option<&SpectralField>) -> SpectralField {
    match previous {
        Some(prev) => {
            let mut out = current.scaled(1.5);
            out.axpy(-0.5, prev);
            out
        }
        None => current.clone(),
    }
}

/// Advances one time step. Returns the new state and the tendencies
/// evaluated at the input state, which the caller passes back as `prev` on
/// the next step.
pub fn step(
    state: &FlowState,
    prev: Option<&Tendencies>,
    cfg: &SegmentConfig,
) -> Result<(FlowState, Tendencies)> {
    let tend = advection(state);
    let cfl = tend.max_speed * cfg.dt * cfg.n.get() as f64 / (2.0 * std::f64::consts::PI);
    if cfl > 0.5 {
        warn!("CFL number {cfl:.3} exceeds 0.5 at t = {:.4}", state.time);
    }
    let mut next = state.clone();
    next.time = state.time + cfg.dt;
    crank_nicolson_update(&mut next.ux, &extrapolate(&tend.ux, prev.map(|p| &p.ux)), cfg.nu, cfg.dt);
    crank_nicolson_update(&mut next.uy, &extrapolate(&tend.uy, prev.map(|p| &p.uy)), cfg.nu, cfg.dt);
    crank_nicolson_update(
        &mut next.phi,
        &extrapolate(&tend.phi, prev.map(|p| &p.phi)),
        cfg.lambda,
        cfg.dt,
    );
    if !next.is_finite() {
        return Err(SivError::NonFinite(format!(
            "forward state at t = {:.6} (max speed before step {:.3e})",
            next.time, tend.max_speed
        )));
    }
    Ok((next, tend))
}

/// Stateful AB2/CN stepper holding one level of tendency history.
#[derive(Clone, Debug)]
pub struct Integrator {
    cfg: SegmentConfig,
    state: FlowState,
    history: Option<Tendencies>,
}

impl Integrator {
    pub fn new(initial: FlowState, cfg: SegmentConfig) -> Self {
        Integrator { cfg, state: initial, history: None }
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn into_state(self) -> FlowState {
        self.state
    }

    pub fn advance(&mut self) -> Result<&FlowState> {
        let (next, tend) = step(&self.state, self.history.as_ref(), &self.cfg)?;
        self.state = next;
        self.history = Some(tend);
        Ok(&self.state)
    }
}

/// Time-ordered states at spacing `dt`, both ends included.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<FlowState>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<FlowState>) -> Result<Self> {
        let t = Trajectory { dt, states };
        t.check_spacing()?;
        Ok(t)
    }

    pub fn t0(&self) -> f64 {
        self.states.first().map_or(0.0, |s| s.time)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &FlowState {
        &self.states[0]
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn size(&self) -> GridSize {
        self.first().size()
    }

    fn check_spacing(&self) -> Result<()> {
        for w in self.states.windows(2) {
            if ((w[1].time - w[0].time) - self.dt).abs() > 1e-9 * self.dt.max(1.0) {
                return Err(SivError::TimeMismatch(format!(
                    "states at {} and {} are not dt = {} apart",
                    w[0].time, w[1].time, self.dt
                )));
            }
        }
        Ok(())
    }

    /// States `start..=end`, re-based as a new trajectory.
    pub fn window(&self, start: usize, end: usize) -> Trajectory {
        Trajectory { dt: self.dt, states: self.states[start..=end].to_vec() }
    }

    pub fn truncate(&self, dst: GridSize) -> Result<Trajectory> {
        Ok(Trajectory {
            dt: self.dt,
            states: self.states.iter().map(|s| s.truncate(dst)).collect::<Result<_>>()?,
        })
    }

    pub fn max_divergence(&self) -> f64 {
        self.states.iter().map(FlowState::divergence_max).fold(0.0, f64::max)
    }
}

/// Integrates one segment from `control`, storing every state.
pub fn run_forward(control: &ControlVector, cfg: &SegmentConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_control_size(control, cfg)?;
    let mut integrator = Integrator::new(control.to_state(cfg.t0), *cfg);
    let mut states = Vec::with_capacity(cfg.steps() + 1);
    states.push(integrator.state().clone());
    for _ in 0..cfg.steps() {
        states.push(integrator.advance()?.clone());
    }
    Ok(Trajectory { dt: cfg.dt, states })
}

fn check_control_size(control: &ControlVector, cfg: &SegmentConfig) -> Result<()> {
    if control.size() != cfg.n {
        return Err(SivError::SizeMismatch(control.size().get(), cfg.n.get()));
    }
    Ok(())
}

/// Trapezoidal weight of sample `i` out of `count` on a uniform grid.
#[inline]
pub(crate) fn trapezoid_weight(i: usize, count: usize, dt: f64) -> f64 {
    if i == 0 || i + 1 == count {
        0.5 * dt
    } else {
        dt
    }
}

/// `J = ½ ∫ ‖φ - ψ‖² dt` with the trapezoidal rule on the shared time grid.
pub fn cost(traj: &Trajectory, measurement: &Trajectory) -> Result<f64> {
    check_grids(traj, measurement)?;
    let count = traj.len();
    Ok(traj
        .states
        .iter()
        .zip(&measurement.states)
        .enumerate()
        .map(|(i, (a, b))| trapezoid_weight(i, count, traj.dt) * 0.5 * a.phi.sub(&b.phi).l2_norm_sq())
        .sum())
}

pub(crate) fn check_grids(traj: &Trajectory, measurement: &Trajectory) -> Result<()> {
    if traj.len() != measurement.len() || traj.is_empty() {
        return Err(SivError::TimeMismatch(format!(
            "trajectory has {} states, measurement {}",
            traj.len(),
            measurement.len()
        )));
    }
    if (traj.dt - measurement.dt).abs() > 1e-12 {
        return Err(SivError::TimeMismatch(format!("dt {} vs {}", traj.dt, measurement.dt)));
    }
    if (traj.t0() - measurement.t0()).abs() > 1e-9 {
        return Err(SivError::TimeMismatch(format!("t0 {} vs {}", traj.t0(), measurement.t0())));
    }
    if traj.size() != measurement.size() {
        return Err(SivError::SizeMismatch(traj.size().get(), measurement.size().get()));
    }
    Ok(())
}

/// Cost of the trajectory started from `control`, without storing states.
pub fn forward_cost(control: &ControlVector, cfg: &SegmentConfig, measurement: &Trajectory) -> Result<f64> {
    cfg.validate()?;
    check_control_size(control, cfg)?;
    let count = cfg.steps() + 1;
    if measurement.len() != count || (measurement.dt - cfg.dt).abs() > 1e-12 {
        return Err(SivError::TimeMismatch(format!(
            "measurement has {} states at dt {}, segment needs {count} at dt {}",
            measurement.len(),
            measurement.dt,
            cfg.dt
        )));
    }
    if measurement.size() != cfg.n {
        return Err(SivError::SizeMismatch(measurement.size().get(), cfg.n.get()));
    }
    let mut integrator = Integrator::new(control.to_state(cfg.t0), *cfg);
    let misfit = |s: &FlowState, i: usize| {
        trapezoid_weight(i, count, cfg.dt) * 0.5 * s.phi.sub(&measurement.states[i].phi).l2_norm_sq()
    };
    let mut j = misfit(integrator.state(), 0);
    for i in 1..count {
        j += misfit(integrator.advance()?, i);
    }
    if !j.is_finite() {
        return Err(SivError::NonFinite("cost".into()));
    }
    Ok(j)
}
