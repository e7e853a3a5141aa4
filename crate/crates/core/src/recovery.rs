//! Constructive local recovery of the velocity from the scalar.
//!
//! With `u = (∂yΘ, -∂xΘ)` the scalar equation becomes the transport equation
//! `XΘ = ζ` for the stream function, where `X = -∂yψ ∂x + ∂xψ ∂y` and
//! `ζ = -∂tψ + λΔψ`. Where `∂yψ ≠ 0` this is
//!
//! ```text
//! ∂xΘ + β ∂yΘ = f,   β = -∂xψ / ∂yψ,   f = -ζ / ∂yψ,
//! ```
//!
//! a first-order equation with `x` in the role of time. Given `Θ` on a
//! vertical line `x = x_Σ`, it is solved by characteristics inside the cone
//! `|y - y₀| < R(δ - (x - x_Σ))` with `R ≥ sup|β|`, and the velocity follows
//! by differentiating `Θ`.
//!
//! The test bed is periodic, so the line is an interior pseudo-boundary and
//! its `Θ` values are supplied by the caller (from a known flow, or a prior
//! reconstruction).

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Result, SivError};
use crate::spectral::{Axis, GridSize, PhysicalField, SpectralField};

/// Coefficient interpolation used along characteristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    /// Tensor-product four-point Lagrange.
    Cubic,
}

/// Fraction of flagged characteristics above which a solve fails.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;

/// Default ε floor as a fraction of max |∂yψ|.
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.1;

/// Scalar snapshots at consecutive times `t_c + j·dt`, `j = -m..=m`, centred
/// on the evaluation time.
#[derive(Clone, Debug)]
pub struct ScalarWindow {
    pub dt: f64,
    pub snapshots: Vec<SpectralField>,
}

impl ScalarWindow {
    pub fn new(dt: f64, snapshots: Vec<SpectralField>) -> Result<Self> {
        if snapshots.len() < 3 || snapshots.len() % 2 == 0 {
            return Err(SivError::config("scalar window needs an odd number (>= 3) of snapshots"));
        }
        if !(dt > 0.0) {
            return Err(SivError::config("window dt must be positive"));
        }
        let size = snapshots[0].size();
        if let Some(bad) = snapshots.iter().find(|s| s.size() != size) {
            return Err(SivError::SizeMismatch(bad.n(), size.get()));
        }
        Ok(ScalarWindow { dt, snapshots })
    }

    pub fn size(&self) -> GridSize {
        self.snapshots[0].size()
    }

    pub fn centre(&self) -> &SpectralField {
        &self.snapshots[self.snapshots.len() / 2]
    }

    /// Second-order central difference `(ψ(t+dt) - ψ(t-dt)) / 2dt`.
    pub fn time_derivative(&self) -> SpectralField {
        let c = self.snapshots.len() / 2;
        let mut d = self.snapshots[c + 1].sub(&self.snapshots[c - 1]);
        d.scale(0.5 / self.dt);
        d
    }

    /// `ζ = -∂tψ + λΔψ`.
    pub fn zeta(&self, lambda: f64) -> SpectralField {
        let mut z = self.centre().laplacian().scaled(lambda);
        z.axpy(-1.0, &self.time_derivative());
        z
    }

    /// Adds the same field to every snapshot.
    pub fn perturbed(&self, delta: &SpectralField) -> ScalarWindow {
        ScalarWindow { dt: self.dt, snapshots: self.snapshots.iter().map(|s| s.add(delta)).collect() }
    }
}

/// Velocity component normal to the scalar isolines.
#[derive(Clone, Debug)]
pub struct PerpVelocity {
    pub ux: PhysicalField,
    pub uy: PhysicalField,
    /// False where `|∇ψ|` fell below the threshold.
    pub valid: Vec<bool>,
    pub masked: usize,
}

/// `u⊥ = (-∂tψ + λΔψ) ∇ψ / |∇ψ|²` on the grid, masking points where
/// `|∇ψ| < threshold`.
pub fn perp_velocity(window: &ScalarWindow, lambda: f64, threshold: f64) -> PerpVelocity {
    let size = window.size();
    let zeta = window.zeta(lambda).to_physical();
    let (gx, gy) = SpectralField::to_physical_pair(&window.centre().dx(), &window.centre().dy());
    let mut ux = PhysicalField::zeros(size);
    let mut uy = PhysicalField::zeros(size);
    let mut valid = vec![true; size.len()];
    let mut masked = 0;
    for i in 0..size.len() {
        let (a, b) = (gx.values()[i], gy.values()[i]);
        let g2 = a * a + b * b;
        if g2.sqrt() < threshold {
            valid[i] = false;
            masked += 1;
            ux.values_mut()[i] = f64::NAN;
            uy.values_mut()[i] = f64::NAN;
            continue;
        }
        let s = zeta.values()[i] / g2;
        ux.values_mut()[i] = s * a;
        uy.values_mut()[i] = s * b;
    }
    PerpVelocity { ux, uy, valid, masked }
}

/// Sampled transport problem `∂xΘ + β∂yΘ = f` with data on the column
/// `line_ix`.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub size: GridSize,
    pub beta: PhysicalField,
    pub f: PhysicalField,
    /// `|∂yψ|`, used for admissibility.
    pub dy_psi_abs: PhysicalField,
    pub line_ix: usize,
    pub y0_ix: usize,
    /// Θ on the line, one value per row, gauged so that `Θ(x_Σ, y₀) = 0`.
    pub boundary_theta: Vec<f64>,
    pub epsilon_floor: f64,
}

/// Builds `β`, `f` from a scalar window and attaches the line data.
///
/// `epsilon` defaults to [`DEFAULT_EPSILON_FRACTION`] of max |∂yψ|. The
/// point `(x_Σ, y₀)` must satisfy `|∂yψ| ≥ ε`.
pub fn build_transport(
    window: &ScalarWindow,
    lambda: f64,
    line_ix: usize,
    y0_ix: usize,
    boundary_theta: &[f64],
    epsilon: Option<f64>,
) -> Result<TransportProblem> {
    let size = window.size();
    let n = size.get();
    if line_ix >= n || y0_ix >= n {
        return Err(SivError::config("line or centre index outside the grid"));
    }
    if boundary_theta.len() != n {
        return Err(SivError::SizeMismatch(boundary_theta.len(), n));
    }
    let psi = window.centre();
    let (psi_x, psi_y) = SpectralField::to_physical_pair(&psi.dx(), &psi.dy());
    let zeta = window.zeta(lambda).to_physical();
    let mut beta = PhysicalField::zeros(size);
    let mut f = PhysicalField::zeros(size);
    let mut dy_abs = PhysicalField::zeros(size);
    for i in 0..size.len() {
        let py = psi_y.values()[i];
        beta.values_mut()[i] = -psi_x.values()[i] / py;
        f.values_mut()[i] = -zeta.values()[i] / py;
        dy_abs.values_mut()[i] = py.abs();
    }
    let epsilon_floor = epsilon.unwrap_or(DEFAULT_EPSILON_FRACTION * dy_abs.max_abs());
    if dy_abs.at(line_ix, y0_ix) < epsilon_floor {
        let rows: Vec<usize> = (0..n).filter(|&j| dy_abs.at(line_ix, j) >= epsilon_floor).collect();
        let hint = rows
            .iter()
            .min_by_key(|&&j| {
                let d = (j as i64 - y0_ix as i64).rem_euclid(n as i64);
                d.min(n as i64 - d)
            })
            .map_or("no admissible row on this line".to_string(), |j| format!("nearest admissible row is {j}"));
        return Err(SivError::Transport(format!(
            "|dy psi| = {:.3e} < epsilon = {epsilon_floor:.3e} at (line {line_ix}, row {y0_ix}); {hint}",
            dy_abs.at(line_ix, y0_ix)
        )));
    }
    let offset = boundary_theta[y0_ix];
    Ok(TransportProblem {
        size,
        beta,
        f,
        dy_psi_abs: dy_abs,
        line_ix,
        y0_ix,
        boundary_theta: boundary_theta.iter().map(|v| v - offset).collect(),
        epsilon_floor,
    })
}

impl TransportProblem {
    /// Problem with explicitly given coefficients; every point is admissible.
    pub fn from_parts(
        beta: PhysicalField,
        f: PhysicalField,
        line_ix: usize,
        y0_ix: usize,
        boundary_theta: Vec<f64>,
    ) -> Result<Self> {
        let size = beta.size();
        if f.size() != size {
            return Err(SivError::SizeMismatch(f.size().get(), size.get()));
        }
        if boundary_theta.len() != size.get() {
            return Err(SivError::SizeMismatch(boundary_theta.len(), size.get()));
        }
        let ones = PhysicalField::from_values(size, vec![1.0; size.len()])?;
        Ok(TransportProblem {
            size,
            beta,
            f,
            dy_psi_abs: ones,
            line_ix,
            y0_ix,
            boundary_theta,
            epsilon_floor: 0.0,
        })
    }

    fn admissible(&self, ix: usize, iy: usize) -> bool {
        self.dy_psi_abs.at(ix, iy) >= self.epsilon_floor
    }

    /// Largest δ for which the cone with slope `slope` lies in the admissible
    /// set and satisfies `sup|β| ≤ slope` over its grid points.
    pub fn max_admissible_delta(&self, slope: f64) -> f64 {
        let h = self.size.spacing();
        let n = self.size.get();
        let mut best_cells = 0usize;
        // grow δ one cell at a time; cones are nested in δ
        for cells in 1..n / 2 {
            let cone = ConeRegion { size: self.size, line_ix: self.line_ix, y0_ix: self.y0_ix, slope, delta: cells as f64 * h };
            let ok = cone.points().all(|(c, m)| {
                let (ix, iy) = cone.grid_index(c, m);
                self.admissible(ix, iy) && self.beta.at(ix, iy).abs() <= slope
            });
            if !ok {
                break;
            }
            best_cells = cells;
        }
        best_cells as f64 * h
    }

    /// Slope `1 + sup|β|` over the admissible run of the line containing y₀.
    pub fn default_slope(&self) -> f64 {
        let n = self.size.get() as i64;
        let mut sup: f64 = 0.0;
        for dir in [1i64, -1] {
            for m in 0..n / 2 {
                let iy = (self.y0_ix as i64 + dir * m).rem_euclid(n) as usize;
                if !self.admissible(self.line_ix, iy) {
                    break;
                }
                sup = sup.max(self.beta.at(self.line_ix, iy).abs());
            }
        }
        1.0 + sup
    }

    /// Largest admissible cone, with `slope` defaulting to [`Self::default_slope`].
    pub fn largest_cone(&self, slope: Option<f64>) -> Result<ConeRegion> {
        let slope = slope.unwrap_or_else(|| self.default_slope());
        let delta = self.max_admissible_delta(slope);
        if delta <= 0.0 {
            return Err(SivError::Transport(format!(
                "no admissible cone with slope {slope:.3} at (line {}, row {})",
                self.line_ix, self.y0_ix
            )));
        }
        Ok(ConeRegion { size: self.size, line_ix: self.line_ix, y0_ix: self.y0_ix, slope, delta })
    }

    /// Checks that `cone` is admissible for this problem.
    pub fn check_cone(&self, cone: &ConeRegion) -> Result<()> {
        for (c, m) in cone.points() {
            let (ix, iy) = cone.grid_index(c, m);
            if !self.admissible(ix, iy) || self.beta.at(ix, iy).abs() > cone.slope {
                let suggestion = self.max_admissible_delta(cone.slope);
                return Err(SivError::Transport(format!(
                    "cone (R = {:.3}, delta = {:.4}) leaves the admissible region at column {c}, row offset {m}; \
                     largest admissible delta for this slope is {suggestion:.4}",
                    cone.slope, cone.delta
                )));
            }
        }
        Ok(())
    }
}

/// Domain of determinacy `{0 ≤ x - x_Σ < δ, |y - y₀| < R(δ - (x - x_Σ))}`.
///
/// Points are addressed by column offset `c ≥ 0` from the line and signed row
/// offset `m` from y₀.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeRegion {
    pub size: GridSize,
    pub line_ix: usize,
    pub y0_ix: usize,
    /// Slope bound R.
    pub slope: f64,
    pub delta: f64,
}

impl ConeRegion {
    pub fn new(size: GridSize, line_ix: usize, y0_ix: usize, slope: f64, delta: f64) -> Result<Self> {
        if !(slope > 0.0 && delta > 0.0) || delta >= PI {
            return Err(SivError::config("cone needs slope > 0 and 0 < delta < pi"));
        }
        if line_ix >= size.get() || y0_ix >= size.get() {
            return Err(SivError::config("cone apex outside the grid"));
        }
        Ok(ConeRegion { size, line_ix, y0_ix, slope, delta })
    }

    pub fn x_sigma(&self) -> f64 {
        self.size.node(self.line_ix)
    }

    pub fn y0(&self) -> f64 {
        self.size.node(self.y0_ix)
    }

    /// Half-width `r(x) = R(δ - (x - x_Σ))` of the cross-section.
    pub fn radius(&self, x_offset: f64) -> f64 {
        self.slope * (self.delta - x_offset)
    }

    pub fn contains(&self, x_offset: f64, y_offset: f64) -> bool {
        x_offset >= -1e-12 && x_offset < self.delta && y_offset.abs() < self.radius(x_offset)
    }

    /// Number of grid columns intersecting the cone.
    pub fn columns(&self) -> usize {
        let h = self.size.spacing();
        (0..).take_while(|&c| (c as f64) * h < self.delta - 1e-12).count()
    }

    /// Largest row offset present in column `c`.
    pub fn half_rows(&self, c: usize) -> i64 {
        let h = self.size.spacing();
        let r = self.radius(c as f64 * h);
        let mut m = (r / h).floor() as i64;
        while m > 0 && (m as f64) * h >= r {
            m -= 1;
        }
        m
    }

    pub fn max_half_rows(&self) -> i64 {
        self.half_rows(0)
    }

    pub fn contains_cell(&self, c: usize, m: i64) -> bool {
        c < self.columns() && m.abs() <= self.half_rows(c)
    }

    /// All `(c, m)` in the cone, column by column.
    pub fn points(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.columns()).flat_map(move |c| {
            let r = self.half_rows(c);
            (-r..=r).map(move |m| (c, m))
        })
    }

    pub fn grid_index(&self, c: usize, m: i64) -> (usize, usize) {
        let n = self.size.get() as i64;
        (
            (self.line_ix as i64 + c as i64).rem_euclid(n) as usize,
            (self.y0_ix as i64 + m).rem_euclid(n) as usize,
        )
    }
}

/// Values on the cone's grid points; NaN marks absent values.
#[derive(Clone, Debug)]
pub struct ConeField {
    pub cone: ConeRegion,
    rows: i64,
    values: Vec<f64>,
}

impl ConeField {
    pub fn new(cone: ConeRegion) -> Self {
        let rows = cone.max_half_rows();
        ConeField { cone, rows, values: vec![f64::NAN; cone.columns() * (2 * rows as usize + 1)] }
    }

    /// Samples `g(x, y)` at the cone points (absolute coordinates, not wrapped).
    pub fn from_fn(cone: ConeRegion, g: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = ConeField::new(cone);
        let h = cone.size.spacing();
        for (c, m) in cone.points() {
            out.set(c, m, g(cone.x_sigma() + c as f64 * h, cone.y0() + m as f64 * h));
        }
        out
    }

    fn slot(&self, c: usize, m: i64) -> Option<usize> {
        if c < self.cone.columns() && m.abs() <= self.rows {
            Some(c * (2 * self.rows as usize + 1) + (m + self.rows) as usize)
        } else {
            None
        }
    }

    /// Value at `(c, m)` if it lies in the cone and is present.
    pub fn get(&self, c: usize, m: i64) -> Option<f64> {
        if !self.cone.contains_cell(c, m) {
            return None;
        }
        self.slot(c, m).map(|i| self.values[i]).filter(|v| !v.is_nan())
    }

    pub fn set(&mut self, c: usize, m: i64, v: f64) {
        if let Some(i) = self.slot(c, m) {
            self.values[i] = v;
        }
    }

    /// Present values as `(c, m, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, i64, f64)> + '_ {
        self.cone.points().filter_map(move |(c, m)| self.get(c, m).map(|v| (c, m, v)))
    }

    pub fn present(&self) -> usize {
        self.iter().count()
    }
}

fn lagrange4(t: f64) -> [f64; 4] {
    // nodes at -1, 0, 1, 2
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Periodic interpolation of grid samples at the physical point `(x, y)`.
fn interpolate(field: &PhysicalField, x: f64, y: f64, scheme: Interpolation) -> f64 {
    let size = field.size();
    let n = size.get() as i64;
    let h = size.spacing();
    let sx = (x + PI) / h;
    let sy = (y + PI) / h;
    let (ix, iy) = (sx.floor(), sy.floor());
    let (tx, ty) = (sx - ix, sy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let at = |i: i64, j: i64| field.at(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize);
    match scheme {
        Interpolation::Bilinear => {
            (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
                + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1))
        }
        Interpolation::Cubic => {
            let (wx, wy) = (lagrange4(tx), lagrange4(ty));
            let mut s = 0.0;
            for (b, wyb) in wy.iter().enumerate() {
                let row: f64 = wx
                    .iter()
                    .enumerate()
                    .map(|(a, wxa)| wxa * at(ix - 1 + a as i64, iy - 1 + b as i64))
                    .sum();
                s += wyb * row;
            }
            s
        }
    }
}

fn interpolate_line(values: &[f64], y: f64, scheme: Interpolation) -> f64 {
    let n = values.len() as i64;
    let h = 2.0 * PI / n as f64;
    let sy = (y + PI) / h;
    let iy = sy.floor();
    let t = sy - iy;
    let iy = iy as i64;
    let at = |j: i64| values[j.rem_euclid(n) as usize];
    match scheme {
        Interpolation::Bilinear => (1.0 - t) * at(iy) + t * at(iy + 1),
        Interpolation::Cubic => lagrange4(t).iter().enumerate().map(|(b, w)| w * at(iy - 1 + b as i64)).sum(),
    }
}

/// Θ on the cone together with solve diagnostics.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub theta: ConeField,
    pub flagged: usize,
}

/// Solves the transport problem on `cone` by tracing each characteristic
/// `dy/dx = β` back to the line with RK4 (step = one grid spacing),
/// accumulating `dΘ/dx = f` along the way.
pub fn solve_transport(
    problem: &TransportProblem,
    cone: &ConeRegion,
    scheme: Interpolation,
) -> Result<TransportSolution> {
    if problem.size != cone.size || problem.line_ix != cone.line_ix || problem.y0_ix != cone.y0_ix {
        return Err(SivError::config("cone does not match the transport problem's grid or line"));
    }
    problem.check_cone(cone)?;
    let h = cone.size.spacing();
    let (xs, y0) = (cone.x_sigma(), cone.y0());
    let rhs = |x: f64, y: f64| {
        (interpolate(&problem.beta, x, y, scheme), interpolate(&problem.f, x, y, scheme))
    };
    let mut theta = ConeField::new(*cone);
    let mut flagged = 0usize;
    let mut total = 0usize;
    for (c, m) in cone.points() {
        total += 1;
        let mut x = xs + c as f64 * h;
        let mut y = y0 + m as f64 * h;
        let mut integral = 0.0;
        let mut escaped = false;
        let step = -h;
        for _ in 0..c {
            let (k1, f1) = rhs(x, y);
            let (k2, f2) = rhs(x + 0.5 * step, y + 0.5 * step * k1);
            let (k3, f3) = rhs(x + 0.5 * step, y + 0.5 * step * k2);
            let (k4, f4) = rhs(x + step, y + step * k3);
            y += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            integral += step / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
            x += step;
            // slack of one cell for the grid-point cone boundary
            if (y - y0).abs() > cone.radius(x - xs) + h {
                escaped = true;
                break;
            }
        }
        if escaped {
            flagged += 1;
            continue;
        }
        // integral runs from x_c down to x_Σ
        let value = interpolate_line(&problem.boundary_theta, y, scheme) - integral;
        theta.set(c, m, value);
    }
    if flagged as f64 > MAX_FLAGGED_FRACTION * total as f64 {
        return Err(SivError::Transport(format!(
            "{flagged} of {total} characteristics left the cone"
        )));
    }
    Ok(TransportSolution { theta, flagged })
}

/// Velocity on the cone points.
#[derive(Clone, Debug)]
pub struct ConeVelocity {
    pub ux: ConeField,
    pub uy: ConeField,
}

fn cone_derivative(theta: &ConeField, c: usize, m: i64, along_x: bool, h: f64) -> Option<f64> {
    let at = |d: i64| -> Option<f64> {
        if along_x {
            let cc = c as i64 + d;
            if cc < 0 {
                return None;
            }
            theta.get(cc as usize, m)
        } else {
            theta.get(c, m + d)
        }
    };
    if let (Some(m2), Some(m1), Some(p1), Some(p2)) = (at(-2), at(-1), at(1), at(2)) {
        return Some((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h));
    }
    let f0 = at(0)?;
    if let (Some(p1), Some(p2)) = (at(1), at(2)) {
        return Some((-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * h));
    }
    if let (Some(m1), Some(m2)) = (at(-1), at(-2)) {
        return Some((3.0 * f0 - 4.0 * m1 + m2) / (2.0 * h));
    }
    None
}

/// `u = (∂yΘ, -∂xΘ)` by fourth-order central differences, with second-order
/// one-sided stencils next to the cone boundary.
pub fn recover_velocity(theta: &ConeField) -> ConeVelocity {
    let h = theta.cone.size.spacing();
    let mut ux = ConeField::new(theta.cone);
    let mut uy = ConeField::new(theta.cone);
    for (c, m, _) in theta.iter() {
        if let (Some(ty), Some(tx)) =
            (cone_derivative(theta, c, m, false, h), cone_derivative(theta, c, m, true, h))
        {
            ux.set(c, m, ty);
            uy.set(c, m, -tx);
        }
    }
    ConeVelocity { ux, uy }
}

/// Result of the full pipeline on one scalar window.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub problem: TransportProblem,
    pub solution: TransportSolution,
    pub velocity: ConeVelocity,
}

/// Builds, solves, and differentiates on a fixed cone.
pub fn recover(
    window: &ScalarWindow,
    lambda: f64,
    cone: &ConeRegion,
    boundary_theta: &[f64],
    epsilon: Option<f64>,
    scheme: Interpolation,
) -> Result<Recovery> {
    let problem = build_transport(window, lambda, cone.line_ix, cone.y0_ix, boundary_theta, epsilon)?;
    let solution = solve_transport(&problem, cone, scheme)?;
    let velocity = recover_velocity(&solution.theta);
    Ok(Recovery { problem, solution, velocity })
}

/// Discrete space-time H⁴ norm of a scalar window on the cone footprint:
/// all derivatives `∂t^a ∂x^b ∂y^c` with `a + b + c ≤ 4` at the centre time,
/// spatial parts spectral, temporal parts central differences, squared values
/// summed with weight h² over the cone points.
pub fn h4_norm(window: &ScalarWindow, cone: &ConeRegion) -> f64 {
    let count = window.snapshots.len();
    let centre = count / 2;
    let max_time_order = (count - 1).min(4);
    let h = cone.size.spacing();
    let mut total = 0.0;
    for a in 0..=max_time_order {
        let Some(weights) = central_weights(a, count) else { continue };
        let mut dt_field = SpectralField::zeros(window.size());
        for (j, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                dt_field.axpy(*w / window.dt.powi(a as i32), &window.snapshots[centre + j - weights.len() / 2]);
            }
        }
        for b in 0..=(4 - a) {
            for c in 0..=(4 - a - b) {
                let mut d = dt_field.clone();
                if b > 0 {
                    d = d.derivative(Axis::X, b as u32);
                }
                if c > 0 {
                    d = d.derivative(Axis::Y, c as u32);
                }
                let p = d.to_physical();
                total += cone
                    .points()
                    .map(|(cc, m)| {
                        let (ix, iy) = cone.grid_index(cc, m);
                        p.at(ix, iy).powi(2)
                    })
                    .sum::<f64>()
                    * h
                    * h;
            }
        }
    }
    total.sqrt()
}

/// Central finite-difference weights for the `order`-th derivative, using
/// the smallest symmetric stencil available within `count` points.
fn central_weights(order: usize, count: usize) -> Option<Vec<f64>> {
    let w: Vec<f64> = match (order, count >= 5) {
        (0, _) => vec![1.0],
        (1, true) => vec![1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0],
        (1, false) => vec![-0.5, 0.0, 0.5],
        (2, true) => vec![-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0],
        (2, false) => vec![1.0, -2.0, 1.0],
        (3, true) => vec![-0.5, 1.0, 0.0, -1.0, 0.5],
        (4, true) => vec![1.0, -4.0, 6.0, -4.0, 1.0],
        _ => return None,
    };
    Some(w)
}

/// Pairwise difference norms on a cone.
fn l2_difference(a: &ConeField, b: &ConeField) -> (f64, usize) {
    let h = a.cone.size.spacing();
    let mut s = 0.0;
    let mut count = 0;
    for (c, m, va) in a.iter() {
        if let Some(vb) = b.get(c, m) {
            s += (va - vb).powi(2);
            count += 1;
        }
    }
    ((s * h * h).sqrt(), count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub delta: f64,
    pub h4_psi_diff: f64,
    pub h1_theta_diff: f64,
    pub l2_u_diff: f64,
    /// `‖u - ũ‖_{L²} / ‖ψ - ψ̃‖_{H⁴}`; NaN when the denominator vanishes.
    pub ratio_lipschitz: f64,
}

impl ProbeReport {
    pub const CSV_HEADER: &'static str = "delta,h4_psi_diff,h1_theta_diff,l2_u_diff,ratio_lipschitz";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e}",
            self.delta, self.h4_psi_diff, self.h1_theta_diff, self.l2_u_diff, self.ratio_lipschitz
        )
    }
}

/// Runs the recovery on `psi` and `psi_tilde` with the same line data and
/// cone, and compares the outcomes.
pub fn stability_probe(
    psi: &ScalarWindow,
    psi_tilde: &ScalarWindow,
    lambda: f64,
    cone: &ConeRegion,
    boundary_theta: &[f64],
    epsilon: Option<f64>,
    scheme: Interpolation,
    delta: f64,
) -> Result<ProbeReport> {
    let base = recover(psi, lambda, cone, boundary_theta, epsilon, scheme)?;
    let pert = recover(psi_tilde, lambda, cone, boundary_theta, epsilon, scheme)?;
    let diff = ScalarWindow {
        dt: psi.dt,
        snapshots: psi.snapshots.iter().zip(&psi_tilde.snapshots).map(|(a, b)| a.sub(b)).collect(),
    };
    let h4 = h4_norm(&diff, cone);
    let (theta_l2, _) = l2_difference(&base.solution.theta, &pert.solution.theta);
    let (ux_l2, _) = l2_difference(&base.velocity.ux, &pert.velocity.ux);
    let (uy_l2, _) = l2_difference(&base.velocity.uy, &pert.velocity.uy);
    let l2_u = (ux_l2 * ux_l2 + uy_l2 * uy_l2).sqrt();
    // ∇Θ = (-u_y, u_x)
    let h1 = (theta_l2 * theta_l2 + l2_u * l2_u).sqrt();
    Ok(ProbeReport {
        delta,
        h4_psi_diff: h4,
        h1_theta_diff: h1,
        l2_u_diff: l2_u,
        ratio_lipschitz: if h4 > 0.0 { l2_u / h4 } else { f64::NAN },
    })
}

/// Cone geometry as manifest text.
pub fn cone_manifest(cone: &ConeRegion) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n={}", cone.size);
    let _ = writeln!(s, "line_ix={}", cone.line_ix);
    let _ = writeln!(s, "y0_ix={}", cone.y0_ix);
    let _ = writeln!(s, "x_sigma={}", cone.x_sigma());
    let _ = writeln!(s, "y0={}", cone.y0());
    let _ = writeln!(s, "slope={}", cone.slope);
    let _ = writeln!(s, "delta={}", cone.delta);
    let _ = writeln!(s, "points={}", cone.points().count());
    s
}

/// Measured constant of the transport energy estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyCheck {
    /// `max_x ‖Θ(x)‖_{L²(B(r(x)))} / ‖f‖_{L²(cone)}`.
    pub ratio: f64,
    /// Grönwall bound `exp((1 + ‖β‖_{W^{1,∞}}) δ / 2)` for the same ratio.
    pub gronwall_bound: f64,
    pub f_norm: f64,
}

/// Solves the problem (whose line data should vanish) and measures the
/// ratio in the energy estimate `‖Θ(x)‖ ≤ C ‖f‖_{L²(cone)}`.
pub fn energy_check(problem: &TransportProblem, cone: &ConeRegion, scheme: Interpolation) -> Result<EnergyCheck> {
    let sol = solve_transport(problem, cone, scheme)?;
    let h = cone.size.spacing();
    let f_norm = (cone
        .points()
        .map(|(c, m)| {
            let (ix, iy) = cone.grid_index(c, m);
            problem.f.at(ix, iy).powi(2)
        })
        .sum::<f64>()
        * h
        * h)
        .sqrt();
    let mut ratio: f64 = 0.0;
    for c in 0..cone.columns() {
        let r = cone.half_rows(c);
        let slice: f64 = (-r..=r).filter_map(|m| sol.theta.get(c, m)).map(|v| v * v).sum::<f64>() * h;
        ratio = ratio.max(slice.sqrt() / f_norm);
    }
    // ‖β‖_{W^{1,∞}} over the cone, with ∂yβ by central differences on the grid
    let n = cone.size.get() as i64;
    let mut w1: f64 = 0.0;
    for (c, m) in cone.points() {
        let (ix, iy) = cone.grid_index(c, m);
        let up = problem.beta.at(ix, (iy as i64 + 1).rem_euclid(n) as usize);
        let dn = problem.beta.at(ix, (iy as i64 - 1).rem_euclid(n) as usize);
        w1 = w1.max(problem.beta.at(ix, iy).abs()).max(((up - dn) / (2.0 * h)).abs());
    }
    Ok(EnergyCheck { ratio, gronwall_bound: ((1.0 + w1) * cone.delta / 2.0).exp(), f_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(n: usize) -> GridSize {
        GridSize::new(n).unwrap()
    }

    fn steady(s: GridSize, f: impl Fn(f64, f64) -> f64 + Copy) -> ScalarWindow {
        let snap = SpectralField::from_fn(s, f);
        ScalarWindow::new(1e-3, vec![snap.clone(), snap.clone(), snap]).unwrap()
    }

    #[test]
    fn window_validation() {
        let s = size(8);
        let z = SpectralField::zeros(s);
        assert!(ScalarWindow::new(1e-3, vec![z.clone(), z.clone()]).is_err());
        assert!(ScalarWindow::new(0.0, vec![z.clone(), z.clone(), z.clone()]).is_err());
        assert!(ScalarWindow::new(1e-3, vec![z.clone(), z.clone(), SpectralField::zeros(size(16))]).is_err());
    }

    #[test]
    fn travelling_wave_perp_velocity() {
        let s = size(32);
        let (c, dt) = (0.7, 1e-4);
        let snaps = (-1..=1).map(|j| SpectralField::from_fn(s, |x, _| (x - c * j as f64 * dt).sin())).collect();
        let w = ScalarWindow::new(dt, snaps).unwrap();
        let p = perp_velocity(&w, 0.0, 0.2);
        assert!(p.masked > 0);
        for i in 0..s.len() {
            if p.valid[i] {
                assert!((p.ux.values()[i] - c).abs() < 1e-8, "{}", p.ux.values()[i]);
                assert!(p.uy.values()[i].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn harmonic_steady_scalar_has_zero_perp_velocity() {
        // sin(x) e^{...} is not periodic; cos(x)cos(y) is not harmonic, but a
        // steady field with λ = 0 gives ζ = 0 all the same
        let w = steady(size(16), |x, y| (x + 2.0 * y).sin());
        let p = perp_velocity(&w, 0.0, 1e-3);
        for i in 0..p.valid.len() {
            if p.valid[i] {
                assert!(p.ux.values()[i].abs() < 1e-12 && p.uy.values()[i].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simple_coefficients() {
        let s = size(32);
        let zero_line = vec![0.0; 32];
        // ψ ≈ y near the line: β = 0, f = 0
        let p = build_transport(&steady(s, |_, y| y.sin()), 0.0, 8, 16, &zero_line, None).unwrap();
        assert!(p.beta.at(8, 16).abs() < 1e-12 && p.f.at(8, 16).abs() < 1e-12);
        // ψ = sin(x + y): β = -1, f = 0 with λ = 0
        let p = build_transport(&steady(s, |x, y| (x + y).sin()), 0.0, 16, 16, &zero_line, None).unwrap();
        assert!((p.beta.at(16, 16) + 1.0).abs() < 1e-12 && p.f.at(16, 16).abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_rejected() {
        let s = size(32);
        // ∂y sin y vanishes at y = ±π/2, row 8
        let err = build_transport(&steady(s, |_, y| y.sin()), 0.0, 4, 8, &[0.0; 32], None).unwrap_err();
        assert!(err.to_string().contains("nearest admissible row"), "{err}");
    }

    fn uniform_problem(s: GridSize, beta: f64, f: f64, g: impl Fn(f64) -> f64) -> TransportProblem {
        let line = (0..s.get()).map(|j| g(s.node(j))).collect();
        TransportProblem::from_parts(
            PhysicalField::from_fn(s, |_, _| beta),
            PhysicalField::from_fn(s, |_, _| f),
            8,
            32,
            line,
        )
        .unwrap()
    }

    #[test]
    fn horizontal_characteristics_copy_line_data() {
        let s = size(64);
        let p = uniform_problem(s, 0.0, 0.0, |y| y.cos());
        let cone = ConeRegion::new(s, 8, 32, 1.0, 1.0).unwrap();
        let sol = solve_transport(&p, &cone, Interpolation::Bilinear).unwrap();
        for (c, m, v) in sol.theta.iter() {
            let y = cone.y0() + m as f64 * s.spacing();
            assert!((v - y.cos()).abs() < 1e-12, "({c},{m})");
        }
    }

    #[test]
    fn straight_characteristics_and_accumulation() {
        let s = size(64);
        let h = s.spacing();
        let g = |y: f64| (2.0 * y).sin();
        let p = uniform_problem(s, 0.5, 0.0, g);
        let cone = ConeRegion::new(s, 8, 32, 1.0, 1.0).unwrap();
        let sol = solve_transport(&p, &cone, Interpolation::Cubic).unwrap();
        for (c, m, v) in sol.theta.iter() {
            let (x, y) = (c as f64 * h, cone.y0() + m as f64 * h);
            assert!((v - g(y - 0.5 * x)).abs() < 1e-3, "({c},{m}) {v}");
        }
        let p = uniform_problem(s, 0.0, 1.0, g);
        let sol = solve_transport(&p, &cone, Interpolation::Bilinear).unwrap();
        for (c, m, v) in sol.theta.iter() {
            let (x, y) = (c as f64 * h, cone.y0() + m as f64 * h);
            assert!((v - (g(y) + x)).abs() < 1e-12);
        }
    }

    #[test]
    fn oversteep_coefficient_rejected() {
        let s = size(64);
        let p = uniform_problem(s, 2.0, 0.0, |_| 0.0);
        let cone = ConeRegion::new(s, 8, 32, 1.0, 1.0).unwrap();
        let err = solve_transport(&p, &cone, Interpolation::Cubic).unwrap_err();
        assert!(err.to_string().contains("largest admissible delta"), "{err}");
    }

    #[test]
    fn velocity_from_stream_functions() {
        let s = size(128);
        let cone = ConeRegion::new(s, 40, 70, 1.0, 1.2).unwrap();
        let v = recover_velocity(&ConeField::from_fn(cone, |_, y| y));
        for (_, _, u) in v.ux.iter() {
            assert!((u - 1.0).abs() < 1e-10);
        }
        for (_, _, u) in v.uy.iter() {
            assert!(u.abs() < 1e-10);
        }
        let v = recover_velocity(&ConeField::from_fn(cone, |x, y| x.sin() * y.sin()));
        let h = s.spacing();
        let mut worst: f64 = 0.0;
        for (c, m, u) in v.ux.iter() {
            let (x, y) = (cone.x_sigma() + c as f64 * h, cone.y0() + m as f64 * h);
            worst = worst.max((u - x.sin() * y.cos()).abs());
            let w = v.uy.get(c, m).unwrap();
            worst = worst.max((w + x.cos() * y.sin()).abs());
        }
        assert!(worst < 5e-3, "{worst}");
        let v = recover_velocity(&ConeField::from_fn(cone, |_, _| 0.0));
        assert!(v.ux.iter().all(|(_, _, u)| u == 0.0));
    }

    #[test]
    fn cone_geometry() {
        let s = size(64);
        let h = s.spacing();
        let cone = ConeRegion::new(s, 0, 32, 2.0, 4.5 * h).unwrap();
        assert_eq!(cone.columns(), 5);
        assert_eq!(cone.half_rows(0), 8);
        assert_eq!(cone.half_rows(4), 0);
        assert!(cone.points().all(|(c, m)| cone.contains(c as f64 * h, m as f64 * h)));
        assert!(ConeRegion::new(s, 0, 32, 0.0, 1.0).is_err());
    }

    #[test]
    fn identical_inputs_probe_to_zero() {
        let s = size(64);
        let w = steady(s, |x, y| y.sin() + 0.3 * (x + 0.4).cos());
        let line = vec![0.0; 64];
        let p = build_transport(&w, 2e-3, 20, 32, &line, None).unwrap();
        let cone = p.largest_cone(None).unwrap();
        let r = stability_probe(&w, &w, 2e-3, &cone, &line, None, Interpolation::Cubic, 0.0).unwrap();
        assert_eq!(r.h4_psi_diff, 0.0);
        assert_eq!(r.l2_u_diff, 0.0);
        // constant offsets drop out
        let shifted = w.perturbed(&SpectralField::constant(s, 0.25));
        let r = stability_probe(&w, &shifted, 2e-3, &cone, &line, None, Interpolation::Cubic, 0.25).unwrap();
        assert!(r.l2_u_diff < 1e-12, "{r:?}");
    }
}
