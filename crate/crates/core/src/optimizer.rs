//! Segment-wise minimisation of the misfit: Polak-Ribière conjugate gradients
//! with Brent line minimisation, stopped when the relative change of `J`
//! between consecutive iterations falls below `rel_tol`. Consecutive segments
//! are warm-started from the propagated end state of the previous one.

use log::{debug, info, warn};

use crate::adjoint::gradient;
use crate::error::{Result, SivError};
use crate::forward::{forward_cost, run_forward, ControlVector, FlowState, SegmentConfig, Trajectory};

/// Minimal vector-space interface needed by the conjugate-gradient loop.
pub trait SearchSpace: Clone {
    fn dot(&self, other: &Self) -> f64;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Hook for re-imposing constraints after an update.
    fn constrain(&mut self) {}
}

impl SearchSpace for ControlVector {
    fn dot(&self, other: &Self) -> f64 {
        ControlVector::dot(self, other)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        ControlVector::axpy(self, a, x)
    }
    fn scale(&mut self, a: f64) {
        ControlVector::scale(self, a)
    }
    fn constrain(&mut self) {
        self.project()
    }
}

impl SearchSpace for Vec<f64> {
    fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn scale(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaRule {
    /// `max(0, β_PR)`.
    PolakRibierePlus,
    /// `β = 0`.
    SteepestDescent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub rel_tol: f64,
    pub max_cg_iters: usize,
    /// Relative tolerance on the step length in Brent's iteration.
    pub brent_tol: f64,
    /// First trial step along the normalised search direction.
    pub bracket_step: f64,
    /// Cap on cost evaluations per line minimisation.
    pub max_line_evals: usize,
    pub beta_rule: BetaRule,
    /// Keep going with the remaining segments after a segment fails.
    pub continue_on_failure: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rel_tol: 0.01,
            max_cg_iters: 30,
            brent_tol: 1e-3,
            bracket_step: 1.0,
            max_line_evals: 20,
            beta_rule: BetaRule::PolakRibierePlus,
            continue_on_failure: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(SivError::config("rel_tol must be positive"));
        }
        if self.max_cg_iters < 1 {
            return Err(SivError::config("max_cg_iters must be at least 1"));
        }
        if !(self.brent_tol > 0.0 && self.bracket_step > 0.0) {
            return Err(SivError::config("brent_tol and bracket_step must be positive"));
        }
        if self.max_line_evals < 3 {
            return Err(SivError::config("max_line_evals must be at least 3"));
        }
        Ok(())
    }
}

/// Polak-Ribière search direction `h = -g_new + β h_old` with
/// `β = max(0, ⟨g_new, g_new - g_old⟩ / ⟨g_old, g_old⟩)`. Falls back to
/// steepest descent without history or when `g_old` vanishes.
pub fn pr_direction<V: SearchSpace>(g_new: &V, g_old: Option<&V>, h_old: Option<&V>) -> V {
    let mut h = g_new.clone();
    h.scale(-1.0);
    if let (Some(g_old), Some(h_old)) = (g_old, h_old) {
        let denom = g_old.dot(g_old);
        if denom > 0.0 {
            let beta = ((g_new.dot(g_new) - g_new.dot(g_old)) / denom).max(0.0);
            if beta > 0.0 {
                h.axpy(beta, h_old);
            }
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub value: f64,
    pub evaluations: usize,
    /// False when no bracket was found and the best sample was returned.
    pub bracketed: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const MAX_BRACKET_TRIALS: usize = 12;

/// Minimises `line_cost` over `α ≥ 0` given `f0 = line_cost(0)`.
///
/// A bracket is found by doubling (or halving, when the first trial step
/// does not decrease the cost) from `initial_step`; Brent's parabolic and
/// golden-section iteration then refines it. Non-finite costs count as +∞.
/// The returned step never has a larger cost than `f0`.
pub fn brent_minimize(
    mut line_cost: impl FnMut(f64) -> f64,
    f0: f64,
    initial_step: f64,
    cfg: &OptimizerConfig,
) -> LineSearchResult {
    let mut evals = 0usize;
    let mut eval = |a: f64, evals: &mut usize| {
        *evals += 1;
        let v = line_cost(a);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let budget = cfg.max_line_evals;
    let mut best = (0.0, f0);

    let a1 = initial_step;
    let f1 = eval(a1, &mut evals);
    if f1 < best.1 {
        best = (a1, f1);
    }
    let bracket = if f1 < f0 {
        let (mut lo, mut mid, mut fmid) = (0.0, a1, f1);
        let mut found = None;
        for _ in 0..MAX_BRACKET_TRIALS {
            if evals >= budget {
                break;
            }
            let hi = 2.0 * mid;
            let fhi = eval(hi, &mut evals);
            if fhi < best.1 {
                best = (hi, fhi);
            }
            if fhi >= fmid {
                found = Some((lo, mid, fmid, hi));
                break;
            }
            lo = mid;
            mid = hi;
            fmid = fhi;
        }
        found
    } else {
        let mut hi = a1;
        let mut found = None;
        for _ in 0..MAX_BRACKET_TRIALS {
            if evals >= budget {
                break;
            }
            let mid = 0.5 * hi;
            let fmid = eval(mid, &mut evals);
            if fmid < best.1 {
                best = (mid, fmid);
            }
            if fmid < f0 {
                found = Some((0.0, mid, fmid, hi));
                break;
            }
            hi = mid;
        }
        found
    };

    let Some((ax, bx, fb, cx)) = bracket else {
        if best.0 > 0.0 {
            warn!("line search: no bracket within {evals} evaluations, taking best sample");
        }
        return LineSearchResult { step: best.0, value: best.1, evaluations: evals, bracketed: false };
    };

    let (mut a, mut b) = (ax.min(cx), ax.max(cx));
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fb, fb, fb);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    while evals < budget {
        let xm = 0.5 * (a + b);
        let tol1 = cfg.brent_tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u, &mut evals);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if fx < best.1 {
        best = (x, fx);
    }
    LineSearchResult { step: best.0, value: best.1, evaluations: evals, bracketed: true }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentStatus {
    /// Relative change of `J` fell below `rel_tol`.
    Converged,
    /// `J` or its gradient vanished exactly.
    ExactMinimum,
    /// No further decrease along steepest descent.
    Stalled,
    IterationCap,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentResult<V = ControlVector> {
    pub control: V,
    pub final_cost: f64,
    pub iterations: usize,
    /// `J` at the start and after each accepted step.
    pub cost_history: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub status: SegmentStatus,
}

/// Nonlinear conjugate gradients over any [`SearchSpace`].
///
/// `value_and_grad` returns `(J, ∇J)`; `value` returns `J` alone and is used
/// by the line search.
pub fn conjugate_gradient<V: SearchSpace>(
    guess: V,
    mut value_and_grad: impl FnMut(&V) -> Result<(f64, V)>,
    mut value: impl FnMut(&V) -> Result<f64>,
    cfg: &OptimizerConfig,
) -> Result<SegmentResult<V>> {
    cfg.validate()?;
    let mut w = guess;
    w.constrain();
    let (mut j, mut g) = value_and_grad(&w)?;
    if !j.is_finite() {
        return Err(SivError::NonFinite("initial cost".into()));
    }
    let mut history = vec![j];
    let mut trace = vec![IterationRecord { iter: 0, cost: j, grad_norm: g.norm(), step: 0.0 }];
    let mut h = pr_direction(&g, None, None);
    let mut steepest = true;
    let mut trial_step = cfg.bracket_step;
    let mut iterations = 0;
    let mut status = SegmentStatus::IterationCap;

    while iterations < cfg.max_cg_iters {
        iterations += 1;
        let gnorm = g.norm();
        if j == 0.0 || gnorm == 0.0 {
            status = SegmentStatus::ExactMinimum;
            break;
        }
        if h.dot(&g) >= 0.0 {
            h = pr_direction(&g, None, None);
            steepest = true;
        }
        let mut dir = h.clone();
        dir.scale(1.0 / dir.norm());
        let trial = |alpha: f64| {
            let mut x = w.clone();
            x.axpy(alpha, &dir);
            x.constrain();
            x
        };
        let line = brent_minimize(|alpha| value(&trial(alpha)).unwrap_or(f64::INFINITY), j, trial_step, cfg);
        debug!("cg {iterations}: J = {j:.6e}, |g| = {gnorm:.3e}, step = {:.3e} ({} evals)", line.step, line.evaluations);
        if line.step == 0.0 {
            if steepest {
                status = SegmentStatus::Stalled;
                break;
            }
            h = pr_direction(&g, None, None);
            steepest = true;
            trial_step = cfg.bracket_step;
            continue;
        }
        w = trial(line.step);
        let (j_new, g_new) = value_and_grad(&w)?;
        if !j_new.is_finite() {
            return Err(SivError::NonFinite(format!("cost after CG iteration {iterations}")));
        }
        history.push(j_new);
        trace.push(IterationRecord { iter: iterations, cost: j_new, grad_norm: g_new.norm(), step: line.step });
        let rel = (j - j_new).abs() / j;
        j = j_new;
        trial_step = line.step;
        if rel < cfg.rel_tol {
            status = SegmentStatus::Converged;
            break;
        }
        h = match cfg.beta_rule {
            BetaRule::PolakRibierePlus => pr_direction(&g_new, Some(&g), Some(&h)),
            BetaRule::SteepestDescent => pr_direction(&g_new, None, None),
        };
        steepest = cfg.beta_rule == BetaRule::SteepestDescent;
        g = g_new;
    }
    Ok(SegmentResult { control: w, final_cost: j, iterations, cost_history: history, trace, status })
}

/// Minimises `J` over the initial condition of one segment.
pub fn minimize_segment(
    guess: &ControlVector,
    measurement: &Trajectory,
    seg: &SegmentConfig,
    cfg: &OptimizerConfig,
) -> Result<SegmentResult> {
    if (measurement.t0() - seg.t0).abs() > 1e-9 || measurement.len() != seg.steps() + 1 {
        return Err(SivError::TimeMismatch(format!(
            "measurement covers t0 = {} with {} states, segment needs t0 = {} with {}",
            measurement.t0(),
            measurement.len(),
            seg.t0,
            seg.steps() + 1
        )));
    }
    conjugate_gradient(
        guess.clone(),
        |w| gradient(w, seg, measurement).map(|(g, j)| (j, g)),
        |w| forward_cost(w, seg, measurement),
        cfg,
    )
}

/// Reconstructs a sequence of segments starting from `initial_guess`. After
/// each segment, `on_segment` receives its index, result, and the propagated
/// end state used to warm-start the next segment.
pub fn reconstruct_with(
    segments: &[Trajectory],
    seg: &SegmentConfig,
    cfg: &OptimizerConfig,
    initial_guess: ControlVector,
    mut on_segment: impl FnMut(usize, &SegmentResult, &FlowState) -> Result<()>,
) -> Result<Vec<SegmentResult>> {
    let mut guess = initial_guess;
    let mut results = Vec::with_capacity(segments.len());
    for (i, meas) in segments.iter().enumerate() {
        let scfg = seg.at(meas.t0());
        let result = match minimize_segment(&guess, meas, &scfg, cfg) {
            Ok(r) => r,
            Err(e) if cfg.continue_on_failure => {
                warn!("segment {i} failed: {e}; continuing from the unoptimised guess");
                let j = forward_cost(&guess, &scfg, meas).unwrap_or(f64::NAN);
                SegmentResult {
                    control: guess.clone(),
                    final_cost: j,
                    iterations: 0,
                    cost_history: vec![j],
                    trace: Vec::new(),
                    status: SegmentStatus::Failed(e.to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        info!(
            "segment {i} (t0 = {:.3}): J {:.4e} -> {:.4e} in {} iterations ({:?})",
            scfg.t0, result.cost_history[0], result.final_cost, result.iterations, result.status
        );
        let endpoint = match run_forward(&result.control, &scfg) {
            Ok(t) => t.last().clone(),
            Err(e) if cfg.continue_on_failure => {
                warn!("segment {i}: propagation failed ({e}); next guess is zero");
                FlowState::zeros(scfg.n, scfg.t1())
            }
            Err(e) => return Err(e),
        };
        on_segment(i, &result, &endpoint)?;
        guess = endpoint.to_control();
        results.push(result);
    }
    Ok(results)
}

/// Reconstructs every segment, the first from a zero guess.
pub fn reconstruct(segments: &[Trajectory], seg: &SegmentConfig, cfg: &OptimizerConfig) -> Result<Vec<SegmentResult>> {
    reconstruct_with(segments, seg, cfg, ControlVector::zeros(seg.n), |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_direction_is_steepest_descent() {
        let g = vec![0.5, -2.0];
        assert_eq!(pr_direction(&g, None, None), vec![-0.5, 2.0]);
        let h_old = vec![3.0, 1.0];
        assert_eq!(pr_direction(&g, Some(&g), Some(&h_old)), vec![-0.5, 2.0]);
        let zero = vec![0.0, 0.0];
        assert_eq!(pr_direction(&g, Some(&zero), Some(&h_old)), vec![-0.5, 2.0]);
    }

    #[test]
    fn pr_toy_vectors() {
        let h = pr_direction(&vec![0.0, 1.0], Some(&vec![1.0, 0.0]), Some(&vec![-1.0, 0.0]));
        assert_eq!(h, vec![-1.0, -1.0]);
    }

    #[test]
    fn brent_quadratic() {
        let cfg = OptimizerConfig { brent_tol: 1e-6, ..Default::default() };
        let r = brent_minimize(|a| (a - 2.0).powi(2), 4.0, 1.0, &cfg);
        assert!((r.step - 2.0).abs() < 1e-5, "{r:?}");
        assert!(r.evaluations <= cfg.max_line_evals);
    }

    #[test]
    fn brent_monotone_returns_origin() {
        let cfg = OptimizerConfig::default();
        let r = brent_minimize(|a| a + 1.0, 1.0, 1.0, &cfg);
        assert_eq!(r.step, 0.0);
        assert_eq!(r.value, 1.0);
        let r = brent_minimize(|_| f64::NAN, 1.0, 1.0, &cfg);
        assert_eq!(r.step, 0.0);
    }

    #[test]
    fn brent_quartic_against_grid_search() {
        let f = |a: f64| a.powi(4) - 2.0 * a * a;
        // dense grid oracle over [0, 3]
        let oracle = (0..=300_000)
            .map(|i| i as f64 * 1e-5)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        let cfg = OptimizerConfig { brent_tol: 1e-6, ..Default::default() };
        for start in [0.05, 0.3, 1.0, 2.5] {
            let r = brent_minimize(f, 0.0, start, &cfg);
            assert!((r.step - oracle).abs() < 1e-4, "start {start}: {r:?}");
        }
    }

    #[test]
    fn cg_on_ill_conditioned_quadratic() {
        let diag = [1.0, 10.0, 100.0];
        let target = [1.0, -2.0, 0.5];
        let f = |x: &Vec<f64>| -> f64 {
            x.iter().zip(diag).zip(target).map(|((x, d), t)| 0.5 * d * (x - t).powi(2)).sum()
        };
        let grad = |x: &Vec<f64>| -> Vec<f64> {
            x.iter().zip(diag).zip(target).map(|((x, d), t)| d * (x - t)).collect()
        };
        let cfg = OptimizerConfig { rel_tol: 1e-12, max_cg_iters: 50, brent_tol: 1e-8, max_line_evals: 60, ..Default::default() };
        let r = conjugate_gradient(vec![0.0; 3], |x| Ok((f(x), grad(x))), |x| Ok(f(x)), &cfg).unwrap();
        assert!(r.final_cost < 1e-10, "{r:?}");
        for w in r.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig { rel_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { max_cg_iters: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
