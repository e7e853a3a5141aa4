//! Backward sweep of the adjoint (Lagrange multiplier) equations and the
//! gradient of the misfit with respect to the segment initial condition.
//!
//! In reversed time `s = t1 - t` the multipliers `(û, φ̂)` obey
//!
//! ```text
//! ∂s û = P[u·(∇û + ∇ûᵀ) + φ∇φ̂] + νΔû
//! ∂s φ̂ = u·∇φ̂ + λΔφ̂ + (ψ - φ)
//! ```
//!
//! starting from `û = φ̂ = 0` at `t1`. Transport and coupling terms use AB2,
//! diffusion Crank-Nicolson, and the known source `ψ - φ` the trapezoidal rule.
//! The gradient is `(-û, -φ̂)` at `t0`; the pressure component vanishes
//! identically because pressure was projected out.

use crate::error::{Result, SivError};
use crate::forward::{
    check_grids, extrapolate, run_forward, cost, ControlVector, FlowState, SegmentConfig,
    Trajectory,
};
use crate::spectral::{
    crank_nicolson_update, divergence_max, leray_project_in_place, GridSize, PhysicalField,
    SpectralField,
};

/// Gradient of `J` with respect to the control, in the L² inner product.
pub type Gradient = ControlVector;

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    pub ahx: SpectralField,
    pub ahy: SpectralField,
    pub aphi: SpectralField,
    pub time: f64,
}

impl AdjointState {
    pub fn zeros(size: GridSize, time: f64) -> Self {
        AdjointState {
            ahx: SpectralField::zeros(size),
            ahy: SpectralField::zeros(size),
            aphi: SpectralField::zeros(size),
            time,
        }
    }

    pub fn divergence_max(&self) -> f64 {
        divergence_max(&self.ahx, &self.ahy)
    }

    pub fn max_abs(&self) -> f64 {
        self.ahx.max_abs().max(self.ahy.max_abs()).max(self.aphi.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.ahx.is_finite() && self.ahy.is_finite() && self.aphi.is_finite()
    }

    /// `(-û, -φ̂)`, projected onto the control space.
    pub fn to_gradient(&self) -> Gradient {
        let mut g = ControlVector {
            ux: self.ahx.scaled(-1.0),
            uy: self.ahy.scaled(-1.0),
            phi: self.aphi.scaled(-1.0),
        };
        g.project();
        g
    }
}

/// Backward-time tendencies of the multipliers, diffusion excluded.
#[derive(Clone, Debug)]
pub struct AdjointTendencies {
    pub ahx: SpectralField,
    pub ahy: SpectralField,
    pub aphi: SpectralField,
}

/// Dealiased but unprojected velocity forcing and scalar transport:
/// `u_j∂_jû_i + u_j∂_iû_j + φ∂_iφ̂` and `u·∇φ̂`.
pub(crate) fn transport_terms(adj: &AdjointState, fwd: &FlowState) -> AdjointTendencies {
    let size = fwd.size();
    let (u, v) = SpectralField::to_physical_pair(&fwd.ux, &fwd.uy);
    let (ax_x, ax_y) = SpectralField::to_physical_pair(&adj.ahx.dx(), &adj.ahx.dy());
    let (ay_x, ay_y) = SpectralField::to_physical_pair(&adj.ahy.dx(), &adj.ahy.dy());
    let (p_x, p_y) = SpectralField::to_physical_pair(&adj.aphi.dx(), &adj.aphi.dy());
    let phi = fwd.phi.to_physical();

    let mut gx = PhysicalField::zeros(size);
    let mut gy = PhysicalField::zeros(size);
    let mut gp = PhysicalField::zeros(size);
    {
        let (u, v, phi) = (u.values(), v.values(), phi.values());
        let (ax_x, ax_y, ay_x, ay_y) = (ax_x.values(), ax_y.values(), ay_x.values(), ay_y.values());
        let (p_x, p_y) = (p_x.values(), p_y.values());
        let out = gx.values_mut();
        for i in 0..size.len() {
            out[i] = 2.0 * u[i] * ax_x[i] + v[i] * (ax_y[i] + ay_x[i]) + phi[i] * p_x[i];
        }
        let out = gy.values_mut();
        for i in 0..size.len() {
            out[i] = u[i] * (ay_x[i] + ax_y[i]) + 2.0 * v[i] * ay_y[i] + phi[i] * p_y[i];
        }
        let out = gp.values_mut();
        for i in 0..size.len() {
            out[i] = u[i] * p_x[i] + v[i] * p_y[i];
        }
    }
    let (tx, ty) = SpectralField::from_physical_pair(&gx, &gy);
    AdjointTendencies { ahx: tx.dealiased(), ahy: ty.dealiased(), aphi: gp.transform().dealiased() }
}

fn transport_projected(adj: &AdjointState, fwd: &FlowState) -> AdjointTendencies {
    let mut t = transport_terms(adj, fwd);
    leray_project_in_place(&mut t.ahx, &mut t.ahy);
    t
}

/// Full non-diffusive backward tendencies, including the misfit source
/// `ψ - φ` on the scalar multiplier.
pub fn adjoint_rhs(adj: &AdjointState, fwd: &FlowState, psi: &SpectralField) -> Result<AdjointTendencies> {
    if (adj.time - fwd.time).abs() > 1e-9 {
        return Err(SivError::TimeMismatch(format!(
            "adjoint at t = {} but forward state at t = {}",
            adj.time, fwd.time
        )));
    }
    let mut t = transport_projected(adj, fwd);
    t.aphi.axpy(1.0, &source(fwd, psi));
    Ok(t)
}

fn source(fwd: &FlowState, psi: &SpectralField) -> SpectralField {
    psi.sub(&fwd.phi).dealiased()
}

/// Sweeps the adjoint from `t1` down to `t0`, calling `observe` on every
/// adjoint state (starting with the zero terminal state). Returns the state
/// at `t0`.
pub fn run_adjoint_with(
    traj: &Trajectory,
    measurement: &Trajectory,
    cfg: &SegmentConfig,
    mut observe: impl FnMut(&AdjointState),
) -> Result<AdjointState> {
    check_grids(traj, measurement)?;
    let last = traj.len() - 1;
    let mut adj = AdjointState::zeros(traj.size(), traj.states[last].time);
    observe(&adj);
    let mut history: Option<AdjointTendencies> = None;
    let mut src_here = source(&traj.states[last], &measurement.states[last].phi);
    for i in (1..=last).rev() {
        let fwd = &traj.states[i];
        let tend = transport_projected(&adj, fwd);
        let src_next = source(&traj.states[i - 1], &measurement.states[i - 1].phi);

        let mut rhs_x = extrapolate(&tend.ahx, history.as_ref().map(|h| &h.ahx));
        let mut rhs_y = extrapolate(&tend.ahy, history.as_ref().map(|h| &h.ahy));
        let mut rhs_p = extrapolate(&tend.aphi, history.as_ref().map(|h| &h.aphi));
        rhs_p.axpy(0.5, &src_here);
        rhs_p.axpy(0.5, &src_next);
        rhs_x.dealias();
        rhs_y.dealias();

        crank_nicolson_update(&mut adj.ahx, &rhs_x, cfg.nu, cfg.dt);
        crank_nicolson_update(&mut adj.ahy, &rhs_y, cfg.nu, cfg.dt);
        crank_nicolson_update(&mut adj.aphi, &rhs_p, cfg.lambda, cfg.dt);
        adj.time = traj.states[i - 1].time;
        if !adj.is_finite() {
            return Err(SivError::NonFinite(format!("adjoint state at t = {:.6}", adj.time)));
        }
        observe(&adj);
        history = Some(tend);
        src_here = src_next;
    }
    Ok(adj)
}

/// Adjoint state at `t0` for the given forward trajectory and measurement.
pub fn run_adjoint(traj: &Trajectory, measurement: &Trajectory, cfg: &SegmentConfig) -> Result<AdjointState> {
    run_adjoint_with(traj, measurement, cfg, |_| {})
}

/// Forward solve, adjoint sweep, and `(∇J, J)`.
pub fn gradient(
    control: &ControlVector,
    cfg: &SegmentConfig,
    measurement: &Trajectory,
) -> Result<(Gradient, f64)> {
    let traj = run_forward(control, cfg)?;
    let j = cost(&traj, measurement)?;
    let adj = run_adjoint(&traj, measurement, cfg)?;
    Ok((adj.to_gradient(), j))
}
