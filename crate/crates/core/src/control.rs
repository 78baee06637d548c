//! Controlled retarded dynamics, the cost functional, the Bellman Hamiltonian
//! and sampled checks of the growth, Lipschitz and homogeneity assumptions.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::path::{stop_path, GridSpec, History, HistoryPoint, PathGrid};
use crate::sampling::{self, SeededRng};
use crate::vecops;

pub type DynamicsFn = Arc<dyn Fn(&History, &[f64]) -> Vec<f64> + Send + Sync>;
pub type RunningFn = Arc<dyn Fn(&History, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&PathGrid) -> f64 + Send + Sync>;
pub type HamiltonianFn = Arc<dyn Fn(&History, &[f64]) -> f64 + Send + Sync>;

/// How the delayed argument of the dynamics reads the history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayKind {
    /// `y(τ)` itself.
    None,
    /// `y(τ − lag)`, the lag a multiple of the step.
    Constant { lag: f64 },
    /// `y(ratio·τ)`: the lag `(1 − ratio)τ` varies with time and is rounded to the grid.
    Proportional { ratio: f64 },
    /// `∫_{-h}^{τ} weight·e^{−decay(τ−ξ)} y(ξ) dξ` by the midpoint rule per cell.
    Kernel { weight: f64, decay: f64 },
}

impl DelayKind {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        match *self {
            DelayKind::None => Ok(()),
            DelayKind::Constant { lag } => {
                if !(lag > 0.0 && lag <= spec.h + 1e-12) {
                    return Err(Error::Construction(format!("lag {lag} must lie in (0, h]")));
                }
                let k = lag / spec.step;
                if libm::fabs(k - libm::round(k)) > 1e-7 * k {
                    return Err(Error::Construction(format!("lag {lag} is not a multiple of the step")));
                }
                Ok(())
            }
            DelayKind::Proportional { ratio } => {
                if !(0.0..1.0).contains(&ratio) || (1.0 - ratio) * spec.horizon > spec.h + 1e-12 {
                    return Err(Error::Construction(format!(
                        "ratio {ratio} must lie in [0, 1) with (1 - ratio) T <= h"
                    )));
                }
                Ok(())
            }
            DelayKind::Kernel { weight, decay } => {
                if !(weight.is_finite() && decay.is_finite() && decay >= 0.0) {
                    return Err(Error::Construction("kernel weight and decay must be finite, decay >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// The delayed argument at the history's current time.
    pub fn apply(&self, h: &History) -> Vec<f64> {
        match *self {
            DelayKind::None => h.current().to_vec(),
            DelayKind::Constant { lag } => h.delayed(lag).to_vec(),
            DelayKind::Proportional { ratio } => h.lookup(ratio * h.t()).to_vec(),
            DelayKind::Kernel { weight, decay } => {
                let spec = h.spec();
                let t = h.t();
                let mut acc = alloc::vec![0.0; spec.n];
                for i in 0..h.index() {
                    let mid = spec.time(i) + 0.5 * spec.step;
                    let k = 0.5 * spec.step * weight * libm::exp(-decay * (t - mid));
                    vecops::axpy(&mut acc, k, h.at(i));
                    vecops::axpy(&mut acc, k, h.at(i + 1));
                }
                acc
            }
        }
    }

    /// A constant `L` with `||apply(h)|| <= L · ||x||_{[-h,t]}`.
    pub fn bound(&self, spec: &GridSpec) -> f64 {
        match *self {
            DelayKind::Kernel { weight, .. } => libm::fabs(weight) * (spec.h + spec.horizon),
            _ => 1.0,
        }
    }
}

/// Retarded optimal control problem with a finite control set.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub spec: GridSpec,
    pub f: DynamicsFn,
    pub g: RunningFn,
    pub sigma: TerminalFn,
    pub controls: Vec<Vec<f64>>,
    /// Growth constant of the dynamics.
    pub c: f64,
    pub delay: DelayKind,
}

impl core::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("controls", &self.controls)
            .field("c", &self.c)
            .field("delay", &self.delay)
            .finish()
    }
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        spec: GridSpec,
        f: impl Fn(&History, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        g: impl Fn(&History, &[f64]) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(&PathGrid) -> f64 + Send + Sync + 'static,
        controls: Vec<Vec<f64>>,
        c: f64,
        delay: DelayKind,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Construction("control list is empty".into()));
        }
        let m = controls[0].len();
        if controls.iter().any(|u| u.len() != m || u.iter().any(|v| !v.is_finite())) {
            return Err(Error::Construction("controls must be finite vectors of one dimension".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Construction(format!("growth constant c = {c} must be positive")));
        }
        delay.validate(&spec)?;
        Ok(Self {
            name: name.into(),
            spec,
            f: Arc::new(f),
            g: Arc::new(g),
            sigma: Arc::new(sigma),
            controls,
            c,
            delay,
        })
    }

    /// Same problem with running cost `g + dg` and terminal cost `σ + ds`.
    pub fn perturbed(
        &self,
        dg: impl Fn(&History) -> f64 + Send + Sync + 'static,
        ds: impl Fn(&PathGrid) -> f64 + Send + Sync + 'static,
    ) -> ControlProblem {
        let (g, s) = (self.g.clone(), self.sigma.clone());
        ControlProblem {
            g: Arc::new(move |h: &History, u: &[f64]| g(h, u) + dg(h)),
            sigma: Arc::new(move |p: &PathGrid| s(p) + ds(p)),
            ..self.clone()
        }
    }

    /// Euler steps from node `from` to node `to` under the constant control `u`,
    /// writing into `path` and returning the trapezoidal integral of `g`.
    pub(crate) fn advance(&self, path: &mut PathGrid, from: usize, to: usize, u: &[f64]) -> Result<f64> {
        let step = self.spec.step;
        let n = self.spec.n;
        let mut running = 0.0;
        let mut g_prev = (self.g)(&History::new(path, from), u);
        for i in from..to {
            let fv = (self.f)(&History::new(path, i), u);
            if fv.len() != n || fv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { cell: i, message: format!("dynamics returned {fv:?}") });
            }
            let next: Vec<f64> = path.node(i).iter().zip(&fv).map(|(y, f)| y + step * f).collect();
            path.node_mut(i + 1).copy_from_slice(&next);
            let g_next = (self.g)(&History::new(path, i + 1), u);
            if !g_next.is_finite() || !g_prev.is_finite() {
                return Err(Error::Evaluation { cell: i, message: "running cost is not finite".into() });
            }
            running += 0.5 * step * (g_prev + g_next);
            g_prev = g_next;
        }
        Ok(running)
    }
}

/// Piecewise-constant control values, one m-vector per grid cell of `[t, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    m: usize,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn constant(u: &[f64], cells: usize) -> Self {
        let mut values = Vec::with_capacity(cells * u.len());
        for _ in 0..cells {
            values.extend_from_slice(u);
        }
        Self { m: u.len(), values }
    }

    /// Signal holding `controls[indices[k]]` on cell `k`.
    pub fn from_indices(controls: &[Vec<f64>], indices: &[usize]) -> Result<Self> {
        let m = controls.first().map_or(0, |u| u.len());
        let mut values = Vec::with_capacity(indices.len() * m);
        for &k in indices {
            let u = controls.get(k).ok_or_else(|| domain!("control index {k} out of range"))?;
            values.extend_from_slice(u);
        }
        Ok(Self { m, values })
    }

    pub fn cells(&self) -> usize {
        self.values.len().checked_div(self.m).unwrap_or(0)
    }

    pub fn get(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.m..(cell + 1) * self.m]
    }
}

fn rollout(problem: &ControlProblem, point: &HistoryPoint, control: &ControlSignal) -> Result<(PathGrid, f64)> {
    problem.spec.check_same(point.spec())?;
    let cells = problem.spec.last_index() - point.index();
    if control.cells() != cells {
        return Err(domain!("control covers {} cells, [t, T] has {cells}", control.cells()));
    }
    let mut path = stop_path(point.path(), point.t())?;
    let mut running = 0.0;
    for k in 0..cells {
        let i = point.index() + k;
        running += problem.advance(&mut path, i, i + 1, control.get(k))?;
    }
    Ok((path, running))
}

/// Explicit Euler solution of the retarded dynamics from `point`.
pub fn integrate_dynamics(problem: &ControlProblem, point: &HistoryPoint, control: &ControlSignal) -> Result<PathGrid> {
    rollout(problem, point, control).map(|r| r.0)
}

/// `J = σ(y) − ∫_t^T g`, the integral by the trapezoid rule on the nodes of each cell.
pub fn cost(problem: &ControlProblem, point: &HistoryPoint, control: &ControlSignal) -> Result<f64> {
    let (path, running) = rollout(problem, point, control)?;
    Ok((problem.sigma)(&path) - running)
}

/// A Hamiltonian `H(t, x(·), s)`.
#[derive(Clone)]
pub struct HamiltonianHandle {
    pub name: String,
    pub eval: HamiltonianFn,
    /// Growth constant of the dependence on `s`.
    pub c: f64,
    /// Known Lipschitz constant in the path, if any.
    pub lambda_hint: Option<f64>,
}

impl core::fmt::Debug for HamiltonianHandle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HamiltonianHandle")
            .field("name", &self.name)
            .field("c", &self.c)
            .field("lambda_hint", &self.lambda_hint)
            .finish()
    }
}

impl HamiltonianHandle {
    pub fn new(name: impl Into<String>, c: f64, eval: impl Fn(&History, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval), c, lambda_hint: None }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_hint = Some(lambda);
        self
    }

    #[inline]
    pub fn eval(&self, h: &History, s: &[f64]) -> f64 {
        (self.eval)(h, s)
    }

    /// `H(t, x, s) = ⟨s, D(x)⟩` for a delayed argument `D`.
    pub fn delayed_linear(delay: DelayKind, spec: &GridSpec) -> Result<Self> {
        delay.validate(spec)?;
        let c = delay.bound(spec);
        let name = format!("delayed_linear:{delay:?}");
        Ok(Self::new(name, c, move |h: &History, s: &[f64]| vecops::dot(s, &delay.apply(h))).with_lambda(c))
    }
}

/// `H(t, x, s) = min_u (⟨s, f(t, x, u)⟩ − g(t, x, u))`, ties to the lowest index.
pub fn bellman_hamiltonian(problem: &ControlProblem) -> Result<HamiltonianHandle> {
    if problem.controls.is_empty() {
        return Err(Error::Construction("control list is empty".into()));
    }
    let p = problem.clone();
    Ok(HamiltonianHandle::new(format!("bellman:{}", problem.name), problem.c, move |h: &History, s: &[f64]| {
        p.controls
            .iter()
            .map(|u| vecops::dot(s, &(p.f)(h, u)) - (p.g)(h, u))
            .fold(f64::INFINITY, f64::min)
    }))
}

/// Index of the minimizing control in the Bellman Hamiltonian.
pub fn bellman_argmin(problem: &ControlProblem, h: &History, s: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, u) in problem.controls.iter().enumerate() {
        let v = vecops::dot(s, &(problem.f)(h, u)) - (problem.g)(h, u);
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Result of a sampled constant estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    /// Largest sampled ratio.
    pub estimated: f64,
    /// The declared constant compared against, if any.
    pub declared: Option<f64>,
    pub samples: usize,
    pub skipped: usize,
    pub passed: bool,
    /// Where the estimate is valid.
    pub coverage: String,
}

fn random_s(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    // norms log-uniform over [1e-2, 1e4]
    let r = libm::pow(10.0, rng.random_range(-2.0..4.0));
    vecops::scale(&sampling::on_sphere(rng, n), r)
}

/// Largest `|H(s) − H(r)| / ((1 + ||x||_{[-h,t]}) ||s − r||)` over random samples.
pub fn check_growth_b2(h: &HamiltonianHandle, spec: GridSpec, trials: usize, seed: u64) -> Result<ConstantReport> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let mut rng = sampling::rng(seed);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..trials {
        let scale = libm::pow(10.0, rng.random_range(-1.0..1.0));
        let p = sampling::random_point(spec, &mut rng, scale, 0.0, spec.horizon);
        let hist = p.history();
        let s = random_s(&mut rng, spec.n);
        let r = if rng.random_bool(0.5) {
            vecops::add(&s, &vecops::scale(&sampling::on_sphere(&mut rng, spec.n), 1e-3 * (1.0 + vecops::norm(&s))))
        } else {
            random_s(&mut rng, spec.n)
        };
        let d = vecops::dist(&s, &r);
        if d == 0.0 {
            skipped += 1;
            continue;
        }
        let ratio = libm::fabs(h.eval(&hist, &s) - h.eval(&hist, &r)) / ((1.0 + hist.sup_norm()) * d);
        worst = f64::max(worst, ratio);
    }
    Ok(ConstantReport {
        estimated: worst,
        declared: Some(h.c),
        samples: trials - skipped,
        skipped,
        passed: worst <= h.c * (1.0 + 1e-9),
        coverage: "random histories and s".into(),
    })
}

/// Largest `|H(t,x,s) − H(t,y,s)| / ((1 + ||s||) max_{τ<=t} ||x − y||)` over pairs from `d`.
pub fn check_lipschitz_b3(
    h: &HamiltonianHandle,
    d: &[PathGrid],
    trials: usize,
    seed: u64,
) -> Result<ConstantReport> {
    if d.len() < 2 {
        return Err(Error::Precondition("the sample set needs at least two histories".into()));
    }
    let spec = *d[0].spec();
    for p in d {
        spec.check_same(p.spec())?;
    }
    let mut rng = sampling::rng(seed);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..trials {
        let a = rng.random_range(0..d.len());
        let b = rng.random_range(0..d.len());
        let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon);
        let diff = (0..=i).fold(0.0, |m, k| f64::max(m, vecops::dist(d[a].node(k), d[b].node(k))));
        if diff == 0.0 {
            skipped += 1;
            continue;
        }
        let s = random_s(&mut rng, spec.n);
        let (hx, hy) = (History::new(&d[a], i), History::new(&d[b], i));
        let ratio = libm::fabs(h.eval(&hx, &s) - h.eval(&hy, &s)) / ((1.0 + vecops::norm(&s)) * diff);
        worst = f64::max(worst, ratio);
    }
    Ok(ConstantReport {
        estimated: worst,
        declared: h.lambda_hint,
        samples: trials - skipped,
        skipped,
        passed: h.lambda_hint.is_none_or(|l| worst <= l * (1.0 + 1e-9)),
        coverage: format!("estimated on D ({} histories)", d.len()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub worst_residual: f64,
    /// Scaling factor of the worst residual.
    pub worst_alpha: f64,
    pub trials: usize,
    pub passed: bool,
}

pub const HOMOGENEITY_ALPHAS: [f64; 4] = [0.0, 0.5, 2.0, 10.0];

/// Samples `|H(t,x,αs) − αH(t,x,s)|` for `α` in [`HOMOGENEITY_ALPHAS`].
pub fn check_homogeneity_b8(h: &HamiltonianHandle, spec: GridSpec, trials: usize, seed: u64) -> Result<HomogeneityReport> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let mut rng = sampling::rng(seed);
    let mut worst = (0.0f64, 1.0);
    let mut passed = true;
    for _ in 0..trials {
        let p = sampling::random_point(spec, &mut rng, 1.0, 0.0, spec.horizon);
        let hist = p.history();
        let s = vecops::scale(&sampling::gaussian(&mut rng, spec.n), 2.0);
        let base = h.eval(&hist, &s);
        for alpha in HOMOGENEITY_ALPHAS {
            let scaled = h.eval(&hist, &vecops::scale(&s, alpha));
            let res = libm::fabs(scaled - alpha * base);
            if res > 1e-9 * (1.0 + libm::fabs(alpha * base)) {
                passed = false;
            }
            if res > worst.0 {
                worst = (res, alpha);
            }
        }
    }
    Ok(HomogeneityReport { worst_residual: worst.0, worst_alpha: worst.1, trials, passed })
}

/// Largest `||f|| / (1 + ||y||_{[-h,τ]})` over random histories and every control.
pub fn check_growth_a2(problem: &ControlProblem, trials: usize, seed: u64) -> Result<ConstantReport> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let spec = problem.spec;
    let mut rng = sampling::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let scale = libm::pow(10.0, rng.random_range(-1.0..1.0));
        let p = sampling::random_point(spec, &mut rng, scale, 0.0, spec.horizon);
        let hist = p.history();
        for u in &problem.controls {
            worst = f64::max(worst, vecops::norm(&(problem.f)(&hist, u)) / (1.0 + hist.sup_norm()));
        }
    }
    Ok(ConstantReport {
        estimated: worst,
        declared: Some(problem.c),
        samples: trials,
        skipped: 0,
        passed: worst <= problem.c * (1.0 + 1e-9),
        coverage: "random histories, all controls".into(),
    })
}

/// Terminal cost families for [`linear_problem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalKind {
    Zero,
    /// `y_1(T)`.
    FirstCoordinate,
    /// `||y(T)||`.
    Norm,
    /// `sin(y_1(T))`.
    Sine,
    /// `||y(T)||²`.
    Quadratic,
    /// `max_{τ ∈ [-h, T]} ||y(τ)||`.
    MaxNorm,
}

impl TerminalKind {
    pub fn eval(&self, p: &PathGrid) -> f64 {
        let last = p.node(p.spec().last_index());
        match self {
            TerminalKind::Zero => 0.0,
            TerminalKind::FirstCoordinate => last[0],
            TerminalKind::Norm => vecops::norm(last),
            TerminalKind::Sine => libm::sin(last[0]),
            TerminalKind::Quadratic => vecops::dot(last, last),
            TerminalKind::MaxNorm => p.max_norm_through(p.spec().last_index()),
        }
    }

    /// The same boundary functional as a function of the terminal state, when it is one.
    pub fn terminal_state_form(&self) -> Option<fn(&[f64]) -> f64> {
        match self {
            TerminalKind::Zero => Some(|_| 0.0),
            TerminalKind::FirstCoordinate => Some(|x| x[0]),
            TerminalKind::Norm => Some(vecops::norm),
            TerminalKind::Sine => Some(|x| libm::sin(x[0])),
            TerminalKind::Quadratic => Some(|x| vecops::dot(x, x)),
            TerminalKind::MaxNorm => None,
        }
    }
}

/// Running cost families for [`linear_problem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningKind {
    Zero,
    Constant { value: f64 },
    /// `weight · ||y(τ)||²`.
    Quadratic { weight: f64 },
}

impl RunningKind {
    pub fn eval(&self, h: &History) -> f64 {
        match *self {
            RunningKind::Zero => 0.0,
            RunningKind::Constant { value } => value,
            RunningKind::Quadratic { weight } => weight * vecops::dot(h.current(), h.current()),
        }
    }
}

/// Coefficients of `f(τ, y, u) = a·y(τ) + b·D(y) + gain·u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub gain: f64,
}

/// Growth constant sufficient for [`linear_problem`]'s dynamics.
pub fn linear_growth_bound(spec: &GridSpec, delay: &DelayKind, coeffs: &Coefficients, controls: &[Vec<f64>]) -> f64 {
    let umax = controls.iter().map(|u| vecops::norm(u)).fold(0.0, f64::max);
    f64::max(libm::fabs(coeffs.a) + libm::fabs(coeffs.b) * delay.bound(spec), libm::fabs(coeffs.gain) * umax)
}

/// Problem with dynamics `a·y(τ) + b·D(y) + gain·u`, controls in `R^n`.
pub fn linear_problem(
    spec: GridSpec,
    delay: DelayKind,
    coeffs: Coefficients,
    controls: Vec<Vec<f64>>,
    c: f64,
    terminal: TerminalKind,
    running: RunningKind,
) -> Result<ControlProblem> {
    if controls.iter().any(|u| u.len() != spec.n) {
        return Err(Error::Construction(format!("controls must have dimension n = {}", spec.n)));
    }
    let need = linear_growth_bound(&spec, &delay, &coeffs, &controls);
    if c < need * (1.0 - 1e-12) {
        return Err(Error::Construction(format!("growth constant c = {c} is below the dynamics' bound {need}")));
    }
    let d = delay.clone();
    let name = format!("linear:{delay:?}");
    ControlProblem::new(
        name,
        spec,
        move |h: &History, u: &[f64]| {
            let mut v = vecops::scale(h.current(), coeffs.a);
            if coeffs.b != 0.0 {
                vecops::axpy(&mut v, coeffs.b, &d.apply(h));
            }
            vecops::axpy(&mut v, coeffs.gain, u);
            v
        },
        move |h: &History, _: &[f64]| running.eval(h),
        move |p: &PathGrid| terminal.eval(p),
        controls,
        c,
        delay,
    )
}
