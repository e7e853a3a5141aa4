//! Fourier field algebra on the bi-periodic square (-π, π)².
//!
//! A [`SpectralField`] stores the complex Fourier coefficients of a real field
//! sampled on an `n × n` grid. Coefficients are normalised so that the
//! `(0, 0)` mode is the field mean, and they are the true Fourier coefficients
//! of the field on (-π, π)², i.e. `f(x, y) = Σ c(k) exp(i (kx x + ky y))`.
//!
//! Storage is row-major with the row index running over `ky` and the column
//! index over `kx`, using the usual FFT ordering `0, 1, …, n/2 - 1, -n/2, …, -1`.
//! Nonlinear products are dealiased with the 2/3 rule, which also removes the
//! Nyquist mode.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SivError};

/// Area of the periodic domain (-π, π)².
pub const DOMAIN_AREA: f64 = 4.0 * PI * PI;

/// Grid points per axis. Always a power of two, at least 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridSize(usize);

impl GridSize {
    pub fn new(n: usize) -> Result<Self> {
        if n >= 4 && n.is_power_of_two() {
            Ok(GridSize(n))
        } else {
            Err(SivError::InvalidGridSize(n))
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0 * self.0
    }

    /// Grid spacing 2π/n.
    #[inline]
    pub fn spacing(self) -> f64 {
        2.0 * PI / self.0 as f64
    }

    /// Physical coordinate of node `i` along either axis.
    #[inline]
    pub fn node(self, i: usize) -> f64 {
        -PI + self.spacing() * i as f64
    }

    /// Signed wavenumber stored at FFT index `i`.
    #[inline]
    pub fn wavenumber(self, i: usize) -> i64 {
        let n = self.0 as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// FFT index of signed wavenumber `k`, if it is representable.
    #[inline]
    pub fn index_of(self, k: i64) -> Option<usize> {
        let n = self.0 as i64;
        if k >= -n / 2 && k < n / 2 {
            Some(k.rem_euclid(n) as usize)
        } else {
            None
        }
    }

    /// Largest retained wavenumber under the 2/3 rule.
    #[inline]
    pub fn dealias_cutoff(self) -> i64 {
        self.0 as i64 / 3
    }
}

impl fmt::Display for GridSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Cached FFT plans and per-index tables for one grid size.
struct Plan {
    size: GridSize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumber for each FFT index.
    k: Vec<f64>,
    /// `(-1)^k`, converting between DFT coefficients of samples starting at
    /// x = -π and Fourier coefficients on (-π, π).
    sign: Vec<f64>,
    /// 2/3-rule mask per axis index.
    keep: Vec<bool>,
}

fn plan(size: GridSize) -> Arc<Plan> {
    static CACHE: OnceLock<Mutex<HashMap<GridSize, Arc<Plan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(size)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let n = size.get();
            let cutoff = size.dealias_cutoff();
            Arc::new(Plan {
                size,
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
                k: (0..n).map(|i| size.wavenumber(i) as f64).collect(),
                sign: (0..n)
                    .map(|i| if size.wavenumber(i) % 2 == 0 { 1.0 } else { -1.0 })
                    .collect(),
                keep: (0..n)
                    .map(|i| {
                        let k = size.wavenumber(i);
                        k.abs() <= cutoff && k != -(n as i64) / 2
                    })
                    .collect(),
            })
        })
        .clone()
}

impl Plan {
    fn fft2(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.size.get();
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        transpose(data, n);
        fft.process_with_scratch(data, &mut scratch);
        transpose(data, n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Real samples on the `n × n` grid, row-major with `values[iy * n + ix]`
/// at `(x_ix, y_iy)`, where `x_i = -π + 2πi/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    size: GridSize,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(size: GridSize) -> Self {
        PhysicalField { size, values: vec![0.0; size.len()] }
    }

    pub fn from_values(size: GridSize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size.len() {
            return Err(SivError::SizeMismatch(values.len(), size.len()));
        }
        Ok(PhysicalField { size, values })
    }

    /// Samples `f(x, y)` at every grid node.
    pub fn from_fn(size: GridSize, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = size.get();
        let mut values = Vec::with_capacity(size.len());
        for iy in 0..n {
            let y = size.node(iy);
            for ix in 0..n {
                values.push(f(size.node(ix), y));
            }
        }
        PhysicalField { size, values }
    }

    pub fn size(&self) -> GridSize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.size.get() + ix]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transform(&self) -> SpectralField {
        SpectralField::from_physical(self)
    }
}

/// Fourier coefficients of a real field on (-π, π)².
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    size: GridSize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(size: GridSize) -> Self {
        SpectralField { size, coeffs: vec![Complex64::new(0.0, 0.0); size.len()] }
    }

    /// Field equal to `value` everywhere.
    pub fn constant(size: GridSize, value: f64) -> Self {
        let mut f = Self::zeros(size);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    pub fn from_coeffs(size: GridSize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != size.len() {
            return Err(SivError::SizeMismatch(coeffs.len(), size.len()));
        }
        Ok(SpectralField { size, coeffs })
    }

    /// Samples `f` on the grid and transforms.
    pub fn from_fn(size: GridSize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_physical(&PhysicalField::from_fn(size, f))
    }

    pub fn size(&self) -> GridSize {
        self.size
    }

    pub fn n(&self) -> usize {
        self.size.get()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of mode `(kx, ky)`; zero when not representable.
    pub fn mode(&self, kx: i64, ky: i64) -> Complex64 {
        match (self.size.index_of(kx), self.size.index_of(ky)) {
            (Some(ix), Some(iy)) => self.coeffs[iy * self.n() + ix],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// Sets mode `(kx, ky)` to `c` and its partner `(-kx, -ky)` to `conj(c)`,
    /// keeping the field real.
    pub fn set_mode(&mut self, kx: i64, ky: i64, c: Complex64) {
        let n = self.n();
        if let (Some(ix), Some(iy)) = (self.size.index_of(kx), self.size.index_of(ky)) {
            self.coeffs[iy * n + ix] = c;
        }
        if let (Some(ix), Some(iy)) = (self.size.index_of(-kx), self.size.index_of(-ky)) {
            self.coeffs[iy * n + ix] = c.conj();
        }
    }

    pub fn from_physical(field: &PhysicalField) -> Self {
        let size = field.size;
        let p = plan(size);
        let mut data: Vec<Complex64> =
            field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        p.fft2(&mut data, &p.forward);
        let n = size.get();
        let norm = 1.0 / size.len() as f64;
        for iy in 0..n {
            for ix in 0..n {
                data[iy * n + ix] *= norm * p.sign[ix] * p.sign[iy];
            }
        }
        SpectralField { size, coeffs: data }
    }

    pub fn to_physical(&self) -> PhysicalField {
        let p = plan(self.size);
        let n = self.n();
        let mut data = self.coeffs.clone();
        for iy in 0..n {
            for ix in 0..n {
                data[iy * n + ix] *= p.sign[ix] * p.sign[iy];
            }
        }
        p.fft2(&mut data, &p.inverse);
        PhysicalField { size: self.size, values: data.into_iter().map(|z| z.re).collect() }
    }

    /// Inverse transform of two fields with a single complex FFT.
    pub fn to_physical_pair(a: &SpectralField, b: &SpectralField) -> (PhysicalField, PhysicalField) {
        assert_eq!(a.size, b.size, "pair transform needs equal sizes");
        let p = plan(a.size);
        let n = a.n();
        let i = Complex64::new(0.0, 1.0);
        let mut data: Vec<Complex64> = Vec::with_capacity(a.size.len());
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                data.push((a.coeffs[idx] + i * b.coeffs[idx]) * (p.sign[ix] * p.sign[iy]));
            }
        }
        p.fft2(&mut data, &p.inverse);
        let re = data.iter().map(|z| z.re).collect();
        let im = data.iter().map(|z| z.im).collect();
        (
            PhysicalField { size: a.size, values: re },
            PhysicalField { size: a.size, values: im },
        )
    }

    /// Forward transform of two real fields with a single complex FFT.
    pub fn from_physical_pair(a: &PhysicalField, b: &PhysicalField) -> (SpectralField, SpectralField) {
        assert_eq!(a.size, b.size, "pair transform needs equal sizes");
        let size = a.size;
        let p = plan(size);
        let n = size.get();
        let mut data: Vec<Complex64> = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| Complex64::new(x, y))
            .collect();
        p.fft2(&mut data, &p.forward);
        let norm = 0.5 / size.len() as f64;
        let mut fa = Vec::with_capacity(size.len());
        let mut fb = Vec::with_capacity(size.len());
        for iy in 0..n {
            let my = (n - iy) % n;
            for ix in 0..n {
                let mx = (n - ix) % n;
                let z = data[iy * n + ix];
                let zc = data[my * n + mx].conj();
                let s = norm * p.sign[ix] * p.sign[iy];
                fa.push((z + zc) * s);
                // (z - zc) / (2i)
                let d = z - zc;
                fb.push(Complex64::new(d.im, -d.re) * s);
            }
        }
        (SpectralField { size, coeffs: fa }, SpectralField { size, coeffs: fb })
    }

    /// Spectral derivative of the given order along `axis`. The Nyquist mode
    /// is dropped for odd orders.
    pub fn derivative(&self, axis: Axis, order: u32) -> SpectralField {
        let p = plan(self.size);
        let n = self.n();
        let half = (n / 2) as i64;
        let mut out = self.clone();
        for iy in 0..n {
            for ix in 0..n {
                let idx = if axis == Axis::X { ix } else { iy };
                let k = p.k[idx];
                let c = &mut out.coeffs[iy * n + ix];
                if order % 2 == 1 && self.size.wavenumber(idx) == -half {
                    *c = Complex64::new(0.0, 0.0);
                    continue;
                }
                *c *= ik_pow(k, order);
            }
        }
        out
    }

    pub fn dx(&self) -> SpectralField {
        self.derivative(Axis::X, 1)
    }

    pub fn dy(&self) -> SpectralField {
        self.derivative(Axis::Y, 1)
    }

    pub fn laplacian(&self) -> SpectralField {
        let p = plan(self.size);
        let n = self.n();
        let mut out = self.clone();
        for iy in 0..n {
            for ix in 0..n {
                out.coeffs[iy * n + ix] *= -(p.k[ix] * p.k[ix] + p.k[iy] * p.k[iy]);
            }
        }
        out
    }

    /// Zeroes every mode with `|kx|` or `|ky|` above n/3, and the Nyquist row
    /// and column.
    pub fn dealias(&mut self) {
        let p = plan(self.size);
        let n = self.n();
        for iy in 0..n {
            for ix in 0..n {
                if !(p.keep[ix] && p.keep[iy]) {
                    self.coeffs[iy * n + ix] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    pub fn dealiased(mut self) -> Self {
        self.dealias();
        self
    }

    /// Largest coefficient magnitude outside the 2/3 band.
    pub fn alias_residual(&self) -> f64 {
        let p = plan(self.size);
        let n = self.n();
        let mut m: f64 = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                if !(p.keep[ix] && p.keep[iy]) {
                    m = m.max(self.coeffs[iy * n + ix].norm());
                }
            }
        }
        m
    }

    /// Copies the modes with `|kx|, |ky| < n_dst / 2` onto a coarser grid.
    pub fn truncate(&self, dst: GridSize) -> Result<SpectralField> {
        if dst > self.size {
            return Err(SivError::TruncationUpward { src: self.n(), dst: dst.get() });
        }
        let mut out = SpectralField::zeros(dst);
        let nd = dst.get();
        let limit = (nd / 2) as i64;
        for iy in 0..nd {
            let ky = dst.wavenumber(iy);
            if ky.abs() >= limit {
                continue;
            }
            let sy = self.size.index_of(ky).expect("coarser wavenumber representable");
            for ix in 0..nd {
                let kx = dst.wavenumber(ix);
                if kx.abs() >= limit {
                    continue;
                }
                let sx = self.size.index_of(kx).expect("coarser wavenumber representable");
                out.coeffs[iy * nd + ix] = self.coeffs[sy * self.n() + sx];
            }
        }
        Ok(out)
    }

    /// Zero-pads onto a finer grid.
    pub fn pad(&self, dst: GridSize) -> Result<SpectralField> {
        if dst < self.size {
            return Err(SivError::SizeMismatch(dst.get(), self.n()));
        }
        let mut out = SpectralField::zeros(dst);
        let n = self.n();
        let limit = (n / 2) as i64;
        for iy in 0..n {
            let ky = self.size.wavenumber(iy);
            for ix in 0..n {
                let kx = self.size.wavenumber(ix);
                if kx.abs() >= limit || ky.abs() >= limit {
                    continue;
                }
                let dx = dst.index_of(kx).expect("finer wavenumber representable");
                let dy = dst.index_of(ky).expect("finer wavenumber representable");
                out.coeffs[dy * dst.get() + dx] = self.coeffs[iy * n + ix];
            }
        }
        Ok(out)
    }

    /// L²(Ω) inner product computed from the coefficients (Parseval).
    pub fn inner_product(&self, other: &SpectralField) -> Result<f64> {
        self.check_size(other)?;
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &SpectralField) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        DOMAIN_AREA * s
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.dot_unchecked(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest violation of `c(-k) = conj(c(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n();
        let mut m: f64 = 0.0;
        for iy in 0..n {
            let my = (n - iy) % n;
            for ix in 0..n {
                let mx = (n - ix) % n;
                let d = self.coeffs[iy * n + ix] - self.coeffs[my * n + mx].conj();
                m = m.max(d.norm());
            }
        }
        m
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &SpectralField) {
        assert_eq!(self.size, x.size, "axpy needs equal sizes");
        for (c, d) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += d * a;
        }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    fn check_size(&self, other: &SpectralField) -> Result<()> {
        if self.size != other.size {
            return Err(SivError::SizeMismatch(self.n(), other.n()));
        }
        Ok(())
    }
}

/// One implicit-explicit update per mode:
/// `f ← [(1 - a) f + dt·g] / (1 + a)` with `a = κ|k|²dt/2`, i.e. Crank-Nicolson
/// on `κΔf` and an explicit tendency `g`.
pub fn crank_nicolson_update(field: &mut SpectralField, tendency: &SpectralField, kappa: f64, dt: f64) {
    assert_eq!(field.size, tendency.size, "update needs equal sizes");
    let p = plan(field.size);
    let n = field.n();
    for iy in 0..n {
        let ky2 = p.k[iy] * p.k[iy];
        for ix in 0..n {
            let a = 0.5 * kappa * (p.k[ix] * p.k[ix] + ky2) * dt;
            let idx = iy * n + ix;
            field.coeffs[idx] = (field.coeffs[idx] * (1.0 - a) + tendency.coeffs[idx] * dt) / (1.0 + a);
        }
    }
}

fn ik_pow(k: f64, order: u32) -> Complex64 {
    let mag = k.powi(order as i32);
    match order % 4 {
        0 => Complex64::new(mag, 0.0),
        1 => Complex64::new(0.0, mag),
        2 => Complex64::new(-mag, 0.0),
        _ => Complex64::new(0.0, -mag),
    }
}

/// Projects `(ux, uy)` onto divergence-free fields:
/// `û(k) ← û(k) - k (k·û(k)) / |k|²`, leaving `k = 0` untouched.
pub fn leray_project(ux: &SpectralField, uy: &SpectralField) -> Result<(SpectralField, SpectralField)> {
    ux.check_size(uy)?;
    let mut px = ux.clone();
    let mut py = uy.clone();
    leray_project_in_place(&mut px, &mut py);
    Ok((px, py))
}

pub fn leray_project_in_place(ux: &mut SpectralField, uy: &mut SpectralField) {
    assert_eq!(ux.size, uy.size, "projection needs equal sizes");
    let p = plan(ux.size);
    let n = ux.n();
    for iy in 0..n {
        let ky = p.k[iy];
        for ix in 0..n {
            let kx = p.k[ix];
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let idx = iy * n + ix;
            let a = ux.coeffs[idx];
            let b = uy.coeffs[idx];
            let kdot = (a * kx + b * ky) / k2;
            ux.coeffs[idx] = a - kdot * kx;
            uy.coeffs[idx] = b - kdot * ky;
        }
    }
}

/// Spectral divergence `i k · û`.
pub fn divergence(ux: &SpectralField, uy: &SpectralField) -> SpectralField {
    ux.dx().add(&uy.dy())
}

/// Max-norm of the spectral divergence `|k · û(k)|`.
pub fn divergence_max(ux: &SpectralField, uy: &SpectralField) -> f64 {
    divergence(ux, uy).max_abs()
}

/// Pointwise product of two physical fields.
pub fn multiply(a: &PhysicalField, b: &PhysicalField) -> PhysicalField {
    assert_eq!(a.size, b.size, "product needs equal sizes");
    PhysicalField {
        size: a.size,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
    }
}
