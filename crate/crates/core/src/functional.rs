//! Non-anticipative functionals and finite-difference estimators for their
//! co-invariant, horizontal, vertical and directional derivatives.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::path::{extend, stop_path, GridSpec, History, HistoryPoint, PathGrid, SlopeSelection};
use crate::sampling::{self, SeededRng};
use crate::vecops;

pub type EvalFn = Arc<dyn Fn(&History) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&History) -> Vec<f64> + Send + Sync>;
/// `(history at t, jump) -> φ(t, x + jump·1_[t,T])`.
pub type JumpFn = Arc<dyn Fn(&History, &[f64]) -> f64 + Send + Sync>;

/// A functional `φ(t, x(·))` with optional analytic ci-derivatives.
#[derive(Clone)]
pub struct FunctionalHandle {
    name: String,
    eval: EvalFn,
    dt: Option<EvalFn>,
    grad: Option<GradFn>,
    jump: Option<JumpFn>,
}

impl core::fmt::Debug for FunctionalHandle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FunctionalHandle")
            .field("name", &self.name)
            .field("analytic_dt", &self.dt.is_some())
            .field("analytic_grad", &self.grad.is_some())
            .field("jump_eval", &self.jump.is_some())
            .finish()
    }
}

impl FunctionalHandle {
    pub fn new(name: impl Into<String>, eval: impl Fn(&History) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval), dt: None, grad: None, jump: None }
    }

    pub fn with_dt(mut self, dt: impl Fn(&History) -> f64 + Send + Sync + 'static) -> Self {
        self.dt = Some(Arc::new(dt));
        self
    }

    pub fn with_grad(mut self, grad: impl Fn(&History) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_jump(mut self, jump: impl Fn(&History, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.jump = Some(Arc::new(jump));
        self
    }

    /// Jump evaluation that shifts every node `>= t` by the jump and calls `eval`.
    /// Correct for functionals that read only node values.
    pub fn with_node_jump(mut self) -> Self {
        let eval = self.eval.clone();
        self.jump = Some(Arc::new(move |h: &History, jump: &[f64]| {
            let mut p = h.full_path().clone();
            for i in h.index()..p.spec().node_count() {
                vecops::axpy(p.node_mut(i), 1.0, jump);
            }
            eval(&History::new(&p, h.index()))
        }));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_derivatives(&self) -> bool {
        self.dt.is_some() && self.grad.is_some()
    }

    pub fn has_jump(&self) -> bool {
        self.jump.is_some()
    }

    #[inline]
    pub fn eval_history(&self, h: &History) -> f64 {
        (self.eval)(h)
    }

    #[inline]
    pub fn eval_at(&self, path: &PathGrid, index: usize) -> f64 {
        (self.eval)(&History::new(path, index))
    }

    #[inline]
    pub fn eval(&self, point: &HistoryPoint) -> f64 {
        (self.eval)(&point.history())
    }

    pub fn analytic_dt(&self, h: &History) -> Option<f64> {
        self.dt.as_ref().map(|f| f(h))
    }

    pub fn analytic_grad(&self, h: &History) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|f| f(h))
    }

    pub fn jump_eval(&self, h: &History, jump: &[f64]) -> Option<f64> {
        self.jump.as_ref().map(|f| f(h, jump))
    }

    /// `self + other`; derivative and jump capabilities survive when both have them.
    pub fn sum(&self, other: &FunctionalHandle) -> FunctionalHandle {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        let mut out = FunctionalHandle::new(format!("{}+{}", self.name, other.name), move |h: &History| a(h) + b(h));
        if let (Some(a), Some(b)) = (self.dt.clone(), other.dt.clone()) {
            out.dt = Some(Arc::new(move |h: &History| a(h) + b(h)));
        }
        if let (Some(a), Some(b)) = (self.grad.clone(), other.grad.clone()) {
            out.grad = Some(Arc::new(move |h: &History| vecops::add(&a(h), &b(h))));
        }
        if let (Some(a), Some(b)) = (self.jump.clone(), other.jump.clone()) {
            out.jump = Some(Arc::new(move |h: &History, j: &[f64]| a(h, j) + b(h, j)));
        }
        out
    }

    /// `k · self`.
    pub fn scaled(&self, k: f64) -> FunctionalHandle {
        let a = self.eval.clone();
        let mut out = FunctionalHandle::new(format!("{k}*{}", self.name), move |h: &History| k * a(h));
        if let Some(a) = self.dt.clone() {
            out.dt = Some(Arc::new(move |h: &History| k * a(h)));
        }
        if let Some(a) = self.grad.clone() {
            out.grad = Some(Arc::new(move |h: &History| vecops::scale(&a(h), k)));
        }
        if let Some(a) = self.jump.clone() {
            out.jump = Some(Arc::new(move |h: &History, j: &[f64]| k * a(h, j)));
        }
        out
    }

    /// `self + k` for a constant `k`.
    pub fn shifted(&self, k: f64) -> FunctionalHandle {
        self.sum(&constant(k))
    }
}

/// `φ ≡ k`.
pub fn constant(k: f64) -> FunctionalHandle {
    FunctionalHandle::new(format!("{k}"), move |_: &History| k)
        .with_dt(|_: &History| 0.0)
        .with_grad(|h: &History| alloc::vec![0.0; h.n()])
        .with_jump(move |_: &History, _: &[f64]| k)
}

/// `φ(t, x) = ⟨s0, x(t)⟩`.
pub fn linear_current(s0: Vec<f64>) -> FunctionalHandle {
    let (a, b, c) = (s0.clone(), s0.clone(), s0);
    FunctionalHandle::new("linear_current", move |h: &History| vecops::dot(&a, h.current()))
        .with_dt(|_: &History| 0.0)
        .with_grad(move |_: &History| b.clone())
        .with_jump(move |h: &History, j: &[f64]| vecops::dot(&c, h.current()) + vecops::dot(&c, j))
}

/// `φ(t, x) = f(t)` with derivative `df`.
pub fn time_only(
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    df: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> FunctionalHandle {
    let f = Arc::new(f);
    let g = f.clone();
    FunctionalHandle::new("time_only", move |h: &History| f(h.t()))
        .with_dt(move |h: &History| df(h.t()))
        .with_grad(|h: &History| alloc::vec![0.0; h.n()])
        .with_jump(move |h: &History, _: &[f64]| g(h.t()))
}

/// `φ(t, x) = ||x(t)||²`.
pub fn squared_current() -> FunctionalHandle {
    FunctionalHandle::new("squared_current", |h: &History| vecops::dot(h.current(), h.current()))
        .with_dt(|_: &History| 0.0)
        .with_grad(|h: &History| vecops::scale(h.current(), 2.0))
        .with_node_jump()
}

/// Trapezoidal `∫_{-h}^{t} ||x(τ)||² dτ`. A jump at `t` alone does not change it.
pub fn integral_squared_norm() -> FunctionalHandle {
    fn q(h: &History) -> f64 {
        let step = h.spec().step;
        (0..h.index())
            .map(|i| {
                let (a, b) = (h.at(i), h.at(i + 1));
                0.5 * step * (vecops::dot(a, a) + vecops::dot(b, b))
            })
            .sum()
    }
    FunctionalHandle::new("integral_squared_norm", q)
        .with_dt(|h: &History| vecops::dot(h.current(), h.current()))
        .with_grad(|h: &History| alloc::vec![0.0; h.n()])
        .with_jump(|h: &History, _: &[f64]| q(h))
}

/// Component `k` of `x(T)`: anticipative, for negative controls.
pub fn terminal_component(k: usize) -> FunctionalHandle {
    FunctionalHandle::new("terminal_component", move |h: &History| {
        let p = h.full_path();
        p.node(p.spec().last_index())[k]
    })
}

/// Outcome of [`check_nonanticipative`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonAnticipationReport {
    pub trials: usize,
    pub max_difference: f64,
    /// `(t, |φ(t,x) − φ(t,y)|)` for every trial above the tolerance.
    pub violations: Vec<(f64, f64)>,
    pub passed: bool,
}

pub const NONANTICIPATION_TOL: f64 = 1e-12;

/// Evaluates `φ` on random pairs of paths that agree on `[-h, t]` and differ after `t`.
pub fn check_nonanticipative(
    phi: &FunctionalHandle,
    spec: GridSpec,
    trials: usize,
    seed: u64,
) -> Result<NonAnticipationReport> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let mut rng = sampling::rng(seed);
    let mut max_difference: f64 = 0.0;
    let mut violations = Vec::new();
    for _ in 0..trials {
        let point = sampling::random_point(spec, &mut rng, 1.0, 0.0, spec.horizon - spec.step);
        let other = sampling::perturb_after(point.path(), point.index(), &mut rng, 1.0);
        let a = phi.eval(&point);
        let b = phi.eval_at(&other, point.index());
        let d = libm::fabs(a - b);
        max_difference = f64::max(max_difference, d);
        if !(d <= NONANTICIPATION_TOL) {
            violations.push((point.t(), d));
        }
    }
    Ok(NonAnticipationReport { trials, max_difference, passed: violations.is_empty(), violations })
}

/// Numerical ci-derivatives and the remainder they leave.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub dt: f64,
    pub grad: Vec<f64>,
    pub residual: f64,
    pub schedule: Vec<f64>,
}

/// `{8Δ, 4Δ, 2Δ, Δ}`.
pub fn default_schedule(step: f64) -> Vec<f64> {
    alloc::vec![8.0 * step, 4.0 * step, 2.0 * step, step]
}

fn forward_cells(point: &HistoryPoint, schedule: &[f64]) -> Result<Vec<usize>> {
    let spec = point.spec();
    if point.is_terminal() {
        return Err(domain!("derivatives are not defined at t = T"));
    }
    if schedule.is_empty() {
        return Err(domain!("empty delta schedule"));
    }
    let mut cells = Vec::with_capacity(schedule.len());
    for &d in schedule {
        let k = libm::round(d / spec.step);
        if !(k >= 1.0) || libm::fabs(d / spec.step - k) > 1e-7 * k {
            return Err(domain!("delta {d} is not a positive multiple of the step {}", spec.step));
        }
        let k = k as usize;
        if cells.last().is_some_and(|&prev| k >= prev) {
            return Err(domain!("delta schedule must be strictly decreasing"));
        }
        if point.index() + k > spec.last_index() {
            return Err(domain!("t + {d} exceeds T"));
        }
        cells.push(k);
    }
    Ok(cells)
}

/// First-order Richardson limit from the last two entries of `(δ, D(δ))`.
pub(crate) fn richardson(xs: &[f64], ys: &[f64], order: i32) -> f64 {
    let m = xs.len();
    if m < 2 {
        return ys[m - 1];
    }
    let (a, b) = (libm::pow(xs[m - 2], order as f64), libm::pow(xs[m - 1], order as f64));
    (a * ys[m - 1] - b * ys[m - 2]) / (a - b)
}

/// Fits `(∂tφ, ∇φ)` from constant-slope extensions with slopes `0, e_1, …, e_n`.
///
/// For each `δ` the slope-0 probe gives `∂tφ ≈ D_0(δ)/δ` and probe `e_i` gives
/// `∂_iφ ≈ (D_i(δ) − D_0(δ))/δ`; both are Richardson-extrapolated over the two
/// smallest `δ`. The residual is the worst `|remainder|/δ` at the smallest `δ`.
pub fn estimate_ci_derivatives(
    phi: &FunctionalHandle,
    point: &HistoryPoint,
    schedule: &[f64],
) -> Result<CiEstimate> {
    let cells = forward_cells(point, schedule)?;
    let spec = point.spec();
    let n = spec.n;
    let forward = spec.last_index() - point.index();
    let base = phi.eval(point);
    let deltas: Vec<f64> = cells.iter().map(|&k| k as f64 * spec.step).collect();

    // diffs[k][j] = φ(t + δ_j, y_k) − φ(t, x)
    let mut probes = Vec::with_capacity(n + 1);
    let mut diffs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let slope = if k == 0 { alloc::vec![0.0; n] } else { vecops::unit(n, k - 1) };
        let y = extend(point, &SlopeSelection::constant(&slope, forward))?;
        diffs.push(cells.iter().map(|&c| phi.eval_at(&y, point.index() + c) - base).collect::<Vec<_>>());
        probes.push((slope, y));
    }
    let quot = |k: usize| -> Vec<f64> {
        (0..cells.len())
            .map(|j| if k == 0 { diffs[0][j] / deltas[j] } else { (diffs[k][j] - diffs[0][j]) / deltas[j] })
            .collect()
    };
    let dt = richardson(&deltas, &quot(0), 1);
    let grad: Vec<f64> = (1..=n).map(|k| richardson(&deltas, &quot(k), 1)).collect();

    let j = cells.len() - 1;
    let mut residual: f64 = 0.0;
    for (k, (_, y)) in probes.iter().enumerate() {
        let inc = vecops::sub(y.node(point.index() + cells[j]), point.history().current());
        let rem = diffs[k][j] - dt * deltas[j] - vecops::dot(&grad, &inc);
        residual = f64::max(residual, libm::fabs(rem) / deltas[j]);
    }
    Ok(CiEstimate { dt, grad, residual, schedule: deltas })
}

/// `|φ(τ,y) − φ(t,x) − ∫ ∂tφ − ∫ ⟨∇φ, ẏ⟩|` along `y = extend(point, sel)`.
///
/// Quadrature is per cell, averaging the analytic derivatives at the two end
/// nodes of the cell; for `∇φ` this is paired with the exact cell increment.
pub fn verify_integral_identity(
    phi: &FunctionalHandle,
    point: &HistoryPoint,
    sel: &SlopeSelection,
    tau: f64,
) -> Result<f64> {
    let (Some(dt), Some(grad)) = (phi.dt.as_ref(), phi.grad.as_ref()) else {
        return Err(Error::Precondition(format!("{} has no analytic ci-derivatives", phi.name)));
    };
    let spec = point.spec();
    let end = spec.index_of(tau)?;
    if end < point.index() || end >= spec.last_index() {
        return Err(domain!("tau = {tau} must satisfy t <= tau < T"));
    }
    let y = extend(point, sel)?;
    let mut integral = 0.0;
    let mut prev_dt = dt(&History::new(&y, point.index()));
    let mut prev_grad = grad(&History::new(&y, point.index()));
    for i in point.index()..end {
        let h = History::new(&y, i + 1);
        let (cur_dt, cur_grad) = (dt(&h), grad(&h));
        let inc = vecops::sub(y.node(i + 1), y.node(i));
        let avg = vecops::scale(&vecops::add(&prev_grad, &cur_grad), 0.5);
        integral += 0.5 * spec.step * (prev_dt + cur_dt) + vecops::dot(&avg, &inc);
        prev_dt = cur_dt;
        prev_grad = cur_grad;
    }
    let lhs = phi.eval_at(&y, end) - phi.eval(point);
    Ok(libm::fabs(lhs - integral))
}

/// Central differences of `jump_eval` along each `e_i`, extrapolated in `δ²`.
pub fn vertical_derivative_estimate(
    phi: &FunctionalHandle,
    point: &HistoryPoint,
    schedule: &[f64],
) -> Result<Vec<f64>> {
    let Some(jump) = phi.jump.as_ref() else {
        return Err(Error::Precondition(format!("{} has no jump evaluation", phi.name)));
    };
    if schedule.is_empty() || schedule.iter().any(|d| !(*d > 0.0)) {
        return Err(domain!("jump sizes must be positive"));
    }
    let n = point.spec().n;
    let h = point.history();
    Ok((0..n)
        .map(|i| {
            let d: Vec<f64> = schedule
                .iter()
                .map(|&s| {
                    let e = vecops::scale(&vecops::unit(n, i), s);
                    let m = vecops::scale(&e, -1.0);
                    (jump(&h, &e) - jump(&h, &m)) / (2.0 * s)
                })
                .collect();
            richardson(schedule, &d, 2)
        })
        .collect())
}

/// Forward differences `(φ(t+δ, x(·∧t)) − φ(t, x))/δ`, extrapolated.
pub fn horizontal_derivative_estimate(
    phi: &FunctionalHandle,
    point: &HistoryPoint,
    schedule: &[f64],
) -> Result<f64> {
    let cells = forward_cells(point, schedule)?;
    let step = point.spec().step;
    let stopped = stop_path(point.path(), point.t())?;
    let base = phi.eval(point);
    let deltas: Vec<f64> = cells.iter().map(|&k| k as f64 * step).collect();
    let quot: Vec<f64> = cells
        .iter()
        .zip(&deltas)
        .map(|(&k, d)| (phi.eval_at(&stopped, point.index() + k) - base) / d)
        .collect();
    Ok(richardson(&deltas, &quot, 1))
}

/// A convex compact set of directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DirectionSet {
    /// Closed ball of the given radius about the origin.
    Ball { radius: f64 },
    /// Convex hull of the listed vectors.
    Hull(Vec<Vec<f64>>),
}

impl DirectionSet {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            DirectionSet::Ball { radius } if *radius >= 0.0 && radius.is_finite() => Ok(()),
            DirectionSet::Ball { radius } => Err(Error::Construction(format!("bad ball radius {radius}"))),
            DirectionSet::Hull(v) if v.is_empty() => Err(Error::Construction("empty direction list".into())),
            DirectionSet::Hull(v) if v.iter().any(|d| d.len() != n) => {
                Err(Error::Construction("direction has wrong dimension".into()))
            }
            DirectionSet::Hull(_) => Ok(()),
        }
    }

    /// `min_{f ∈ F} ⟨s, f⟩`.
    pub fn support_min(&self, s: &[f64]) -> f64 {
        match self {
            DirectionSet::Ball { radius } => -radius * vecops::norm(s),
            DirectionSet::Hull(v) => v.iter().map(|d| vecops::dot(s, d)).fold(f64::INFINITY, f64::min),
        }
    }

    /// `max_{f ∈ F} ⟨s, f⟩`.
    pub fn support_max(&self, s: &[f64]) -> f64 {
        match self {
            DirectionSet::Ball { radius } => radius * vecops::norm(s),
            DirectionSet::Hull(v) => v.iter().map(|d| vecops::dot(s, d)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn extreme_candidates(&self, n: usize, eps: f64, dir: Option<&[f64]>) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut axes: Vec<Vec<f64>> = (0..n).map(|i| vecops::unit(n, i)).collect();
        if let Some(d) = dir {
            axes.push(d.to_vec());
        }
        match self {
            DirectionSet::Ball { radius } => {
                for a in &axes {
                    out.push(vecops::scale(a, radius + eps));
                    out.push(vecops::scale(a, -(radius + eps)));
                }
            }
            DirectionSet::Hull(v) => {
                for d in v {
                    out.push(d.clone());
                    for a in &axes {
                        out.push(vecops::add(d, &vecops::scale(a, eps)));
                        out.push(vecops::add(d, &vecops::scale(a, -eps)));
                    }
                }
            }
        }
        out
    }

    fn sample(&self, rng: &mut SeededRng, n: usize, eps: f64) -> Vec<f64> {
        match self {
            DirectionSet::Ball { radius } => sampling::in_ball(rng, n, radius + eps),
            DirectionSet::Hull(v) => {
                let w: Vec<f64> = v.iter().map(|_| -libm::log(rng.random_range(1e-12..1.0))).collect();
                let total: f64 = w.iter().sum();
                let mut f = alloc::vec![0.0; n];
                for (d, wk) in v.iter().zip(&w) {
                    vecops::axpy(&mut f, wk / total, d);
                }
                vecops::add(&f, &sampling::in_ball(rng, n, eps))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    Lower,
    Upper,
}

/// Settings for [`directional_derivative`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalConfig {
    pub eps_schedule: Vec<f64>,
    pub delta_schedule: Vec<f64>,
    pub samples_per_eps: usize,
    pub seed: u64,
}

impl DirectionalConfig {
    pub fn new(step: f64, seed: u64) -> Self {
        Self {
            eps_schedule: alloc::vec![0.1, 0.05, 0.025],
            delta_schedule: default_schedule(step),
            samples_per_eps: 64,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalEstimate {
    /// Extrapolated `ε → 0` limit.
    pub value: f64,
    /// `(ε, inner inf or sup)` for each `ε` of the schedule.
    pub eps_sequence: Vec<(f64, f64)>,
}

/// Lower or upper right derivative of `φ` in the multi-valued direction `F`.
///
/// For each `ε` the inner inf/sup runs over random piecewise-constant
/// selections (pieces as long as the largest `δ`) from the `ε`-neighbourhood of `F` together with extreme constant
/// selections (axis and vertex directions, and the direction of a fitted
/// gradient). The `δ → 0` limit of each quotient is Richardson-extrapolated and
/// the `ε → 0` limit is extrapolated linearly from the two smallest `ε`.
pub fn directional_derivative(
    phi: &FunctionalHandle,
    point: &HistoryPoint,
    set: &DirectionSet,
    bound: Bound,
    cfg: &DirectionalConfig,
) -> Result<DirectionalEstimate> {
    let spec = point.spec();
    let n = spec.n;
    set.validate(n)?;
    let cells = forward_cells(point, &cfg.delta_schedule)?;
    if cfg.eps_schedule.is_empty() || cfg.eps_schedule.iter().any(|e| !(*e > 0.0)) {
        return Err(domain!("eps schedule must be non-empty and positive"));
    }
    let deltas: Vec<f64> = cells.iter().map(|&k| k as f64 * spec.step).collect();
    let forward = spec.last_index() - point.index();
    let base = phi.eval(point);
    let limit_of = |sel: &SlopeSelection| -> Result<f64> {
        let y = extend(point, sel)?;
        let q: Vec<f64> = cells
            .iter()
            .zip(&deltas)
            .map(|(&k, d)| (phi.eval_at(&y, point.index() + k) - base) / d)
            .collect();
        Ok(richardson(&deltas, &q, 1))
    };

    let fitted = estimate_ci_derivatives(phi, point, &cfg.delta_schedule)?;
    let g = vecops::norm(&fitted.grad);
    let dir = if g > 1e-12 { Some(vecops::scale(&fitted.grad, 1.0 / g)) } else { None };

    let mut rng = sampling::rng(cfg.seed);
    let mut eps_sequence = Vec::with_capacity(cfg.eps_schedule.len());
    for &eps in &cfg.eps_schedule {
        let mut best = match bound {
            Bound::Lower => f64::INFINITY,
            Bound::Upper => f64::NEG_INFINITY,
        };
        let mut take = |v: f64| {
            best = match bound {
                Bound::Lower => f64::min(best, v),
                Bound::Upper => f64::max(best, v),
            }
        };
        for f in set.extreme_candidates(n, eps, dir.as_deref()) {
            take(limit_of(&SlopeSelection::constant(&f, forward))?);
        }
        for _ in 0..cfg.samples_per_eps {
            // pieces span the largest probe window so that the quotients
            // of one selection share a slope and extrapolate cleanly
            let mut slopes = Vec::with_capacity(forward * n);
            let mut f = Vec::new();
            for k in 0..forward {
                if k % cells[0] == 0 {
                    f = set.sample(&mut rng, n, eps);
                }
                slopes.extend_from_slice(&f);
            }
            take(limit_of(&SlopeSelection::new(n, slopes)?)?);
        }
        eps_sequence.push((eps, best));
    }
    let xs: Vec<f64> = eps_sequence.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = eps_sequence.iter().map(|p| p.1).collect();
    Ok(DirectionalEstimate { value: richardson(&xs, &ys, 1), eps_sequence })
}
