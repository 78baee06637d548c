//! Sampled checks of the minimax, upper/lower and viscosity solution
//! properties, and the consistency and stability experiments.
//!
//! The characteristic properties are existential, so a failed search means
//! "no witness found within the budget", never a disproof.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::characteristics::{integrate_characteristic_until, Complex, SelectionPolicy, SelectorFn};
use crate::classical::ClassicalSolution;
use crate::control::{ControlProblem, HamiltonianHandle, TerminalFn};
use crate::error::{domain, Error, Result};
use crate::functional::{
    default_schedule, directional_derivative, estimate_ci_derivatives, linear_current, Bound, DirectionSet,
    DirectionalConfig, FunctionalHandle,
};
use crate::lyapunov::{self, LyapunovParams};
use crate::path::{stop_path, History, HistoryPoint, PathGrid};
use crate::sampling::{self, SeededRng};
use crate::value::{value, DPConfig};
use crate::vecops;

/// Per-cell choice of a characteristic search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellChoice {
    /// A point of the closed unit ball, mapped into the complex.
    Ball(Vec<f64>),
    /// The selection produced by hint `k`.
    Hint(usize),
}

/// Budget and seed of a characteristic search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Number of contiguous cell blocks for coordinate descent.
    pub blocks: usize,
    /// Random unit-ball points added to the constant candidates.
    pub random_candidates: usize,
}

impl SearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self { budget, seed, blocks: 4, random_candidates: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `max_τ |φ(τ, y) − φ(t, x) − z(τ)| <= tol`.
    Minimax,
    /// `φ(τ, y) − φ(t, x) <= z(τ) + tol`.
    Upper,
    /// `φ(τ, y) − φ(t, x) >= z(τ) − tol`.
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WitnessFound,
    NotFoundWithinBudget,
    /// The boundary pre-check failed; no search was run.
    BoundaryViolated,
}

/// Outcome of one characteristic check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub kind: CheckKind,
    pub t: f64,
    pub tau: f64,
    pub param: Vec<f64>,
    pub tol: f64,
    pub verdict: Verdict,
    pub passed: bool,
    /// Best objective found: the deviation for [`CheckKind::Minimax`], the
    /// one-sided excess otherwise. Non-positive excess means strict satisfaction.
    pub margin: f64,
    pub evaluations: usize,
    pub budget: usize,
    pub seed: u64,
    pub witness: Vec<CellChoice>,
}

fn candidates(sd: usize, hints: usize, random: usize, rng: &mut SeededRng) -> Vec<CellChoice> {
    let mut out: Vec<CellChoice> = (0..hints).map(CellChoice::Hint).collect();
    out.push(CellChoice::Ball(alloc::vec![0.0; sd]));
    for frac in [1.0, 0.5, 0.1] {
        for i in 0..sd {
            out.push(CellChoice::Ball(vecops::scale(&vecops::unit(sd, i), frac)));
            out.push(CellChoice::Ball(vecops::scale(&vecops::unit(sd, i), -frac)));
        }
    }
    for _ in 0..random {
        out.push(CellChoice::Ball(sampling::in_ball(rng, sd, 1.0)));
    }
    out
}

struct Best {
    value: f64,
    choice: Vec<CellChoice>,
    evaluations: usize,
}

/// Constant candidates first, then block coordinate descent with random
/// restarts when a sweep stalls. The evaluation sequence does not depend on
/// the budget, so the best value is non-increasing in it.
fn search(
    cells: usize,
    sd: usize,
    hints: usize,
    cfg: &SearchConfig,
    target: f64,
    objective: &mut dyn FnMut(&[CellChoice]) -> f64,
) -> Best {
    let mut rng = sampling::rng(cfg.seed);
    let cands = candidates(sd, hints, cfg.random_candidates, &mut rng);
    let mut best = Best { value: f64::INFINITY, choice: alloc::vec![CellChoice::Ball(alloc::vec![0.0; sd]); cells], evaluations: 0 };
    let mut try_choice = |best: &mut Best, choice: Vec<CellChoice>| -> bool {
        if best.evaluations >= cfg.budget || best.value <= target {
            return false;
        }
        best.evaluations += 1;
        let v = objective(&choice);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < best.value {
            best.value = v;
            best.choice = choice;
            return true;
        }
        false
    };
    for c in &cands {
        try_choice(&mut best, alloc::vec![c.clone(); cells]);
    }
    let blocks = cfg.blocks.clamp(1, cells.max(1));
    let bounds: Vec<(usize, usize)> = (0..blocks).map(|b| (b * cells / blocks, (b + 1) * cells / blocks)).collect();
    while best.evaluations < cfg.budget && best.value > target {
        let mut improved = false;
        for &(lo, hi) in &bounds {
            for c in &cands {
                let mut trial = best.choice.clone();
                for slot in &mut trial[lo..hi] {
                    *slot = c.clone();
                }
                improved |= try_choice(&mut best, trial);
            }
        }
        if !improved {
            let trial: Vec<CellChoice> = (0..cells).map(|_| CellChoice::Ball(sampling::in_ball(&mut rng, sd, 1.0))).collect();
            try_choice(&mut best, trial);
        }
    }
    best
}

fn policy_of(choice: &[CellChoice], hints: &[SelectorFn]) -> SelectionPolicy {
    let choice = choice.to_vec();
    let hints = hints.to_vec();
    SelectionPolicy::Callback(Arc::new(move |h: &History, cell: usize| match &choice[cell] {
        CellChoice::Ball(b) => b.clone(),
        CellChoice::Hint(k) => hints[*k](h, cell),
    }))
}

/// Unit-ball selections of the standard complex with constant `c` that
/// reproduce each control's velocity `f(τ, y, u)`, clipped to the ball.
pub fn control_hints(problem: &ControlProblem, c: f64) -> Vec<SelectorFn> {
    (0..problem.controls.len())
        .map(|k| {
            let p = problem.clone();
            let f: SelectorFn = Arc::new(move |h: &History, _| {
                let v = (p.f)(h, &p.controls[k]);
                let b = vecops::scale(&v, 1.0 / (c * (1.0 + h.sup_norm())));
                let r = vecops::norm(&b);
                if r > 1.0 {
                    vecops::scale(&b, 1.0 / r)
                } else {
                    b
                }
            });
            f
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_check(
    kind: CheckKind,
    phi: &FunctionalHandle,
    complex: &dyn Complex,
    point: &HistoryPoint,
    param: &[f64],
    tau_index: usize,
    tol: f64,
    cfg: &SearchConfig,
    hints: &[SelectorFn],
) -> Result<CheckReport> {
    let spec = *point.spec();
    let t0 = point.index();
    let cells = tau_index - t0;
    let sd = complex.selection_dim(spec.n);
    let base = phi.eval(point);
    let mut objective = |choice: &[CellChoice]| -> f64 {
        let policy = policy_of(choice, hints);
        let pair = match integrate_characteristic_until(complex, point, param, &policy, cfg.seed, tau_index) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let gap = |i: usize| phi.eval_at(&pair.y, i) - base - pair.z_at(i);
        match kind {
            CheckKind::Upper => gap(tau_index),
            CheckKind::Lower => -gap(tau_index),
            CheckKind::Minimax => (t0 + 1..=tau_index).map(|i| libm::fabs(gap(i))).fold(0.0, f64::max),
        }
    };
    let (margin, witness, evaluations) = if cells == 0 {
        (0.0, Vec::new(), 0)
    } else {
        let b = search(cells, sd, hints.len(), cfg, tol, &mut objective);
        (b.value, b.choice, b.evaluations)
    };
    let passed = margin <= tol;
    Ok(CheckReport {
        kind,
        t: point.t(),
        tau: spec.time(tau_index),
        param: param.to_vec(),
        tol,
        verdict: if passed { Verdict::WitnessFound } else { Verdict::NotFoundWithinBudget },
        passed,
        margin,
        evaluations,
        budget: cfg.budget,
        seed: cfg.seed,
        witness,
    })
}

fn check_window(point: &HistoryPoint, tau: f64, complex: &dyn Complex, param: &[f64]) -> Result<usize> {
    let spec = point.spec();
    if point.is_terminal() {
        return Err(domain!("checks need t < T"));
    }
    if param.len() != complex.param_dim(spec.n) {
        return Err(domain!("parameter has dimension {}, expected {}", param.len(), complex.param_dim(spec.n)));
    }
    let ti = spec.index_of(tau)?;
    if ti < point.index() {
        return Err(domain!("τ = {tau} precedes t = {}", point.t()));
    }
    Ok(ti)
}

/// Searches for a characteristic with `φ(τ, y) − φ(t, x) <= z(τ) + tol`.
#[allow(clippy::too_many_arguments)]
pub fn check_upper(
    phi: &FunctionalHandle,
    complex: &dyn Complex,
    point: &HistoryPoint,
    param: &[f64],
    tau: f64,
    tol: f64,
    cfg: &SearchConfig,
    hints: &[SelectorFn],
) -> Result<CheckReport> {
    let ti = check_window(point, tau, complex, param)?;
    run_check(CheckKind::Upper, phi, complex, point, param, ti, tol, cfg, hints)
}

/// Searches for a characteristic with `φ(τ, y) − φ(t, x) >= z(τ) − tol`.
#[allow(clippy::too_many_arguments)]
pub fn check_lower(
    phi: &FunctionalHandle,
    complex: &dyn Complex,
    point: &HistoryPoint,
    param: &[f64],
    tau: f64,
    tol: f64,
    cfg: &SearchConfig,
    hints: &[SelectorFn],
) -> Result<CheckReport> {
    let ti = check_window(point, tau, complex, param)?;
    run_check(CheckKind::Lower, phi, complex, point, param, ti, tol, cfg, hints)
}

/// Sampled comparison of `φ(T, ·)` with `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub samples: usize,
    /// `max (φ(T, x) − σ(x))`.
    pub max_excess: f64,
    /// `max (σ(x) − φ(T, x))`.
    pub max_deficit: f64,
    pub tol: f64,
}

impl BoundaryReport {
    /// `φ(T, ·) >= σ`.
    pub fn upper_holds(&self) -> bool {
        self.max_deficit <= self.tol
    }
    /// `φ(T, ·) <= σ`.
    pub fn lower_holds(&self) -> bool {
        self.max_excess <= self.tol
    }
    pub fn equality_holds(&self) -> bool {
        self.upper_holds() && self.lower_holds()
    }
}

/// Compares `φ(T, x)` with `σ(x)` on random paths of unit scale.
pub fn check_boundary(
    phi: &FunctionalHandle,
    sigma: &TerminalFn,
    spec: crate::path::GridSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> BoundaryReport {
    let mut rng = sampling::rng(seed);
    let last = spec.last_index();
    let (mut excess, mut deficit) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let p = sampling::random_path(spec, &mut rng, 1.0);
        let d = phi.eval_at(&p, last) - sigma(&p);
        let d = if d.is_nan() { f64::INFINITY } else { d };
        excess = f64::max(excess, d);
        deficit = f64::max(deficit, -d);
    }
    BoundaryReport { samples, max_excess: excess, max_deficit: deficit, tol }
}

/// Boundary samples used by [`check_m`]'s pre-check.
pub const BOUNDARY_SAMPLES: usize = 32;

/// Searches for a characteristic with `max_τ |φ(τ, y) − φ(t, x) − z(τ)| <= tol`
/// over `τ ∈ [t, T]`, after checking `φ(T, ·) = σ` within the given tolerance
/// when `boundary` is present.
#[allow(clippy::too_many_arguments)]
pub fn check_m(
    phi: &FunctionalHandle,
    complex: &dyn Complex,
    point: &HistoryPoint,
    s: &[f64],
    tol: f64,
    cfg: &SearchConfig,
    hints: &[SelectorFn],
    boundary: Option<(&TerminalFn, f64)>,
) -> Result<CheckReport> {
    let spec = *point.spec();
    let param = complex.canonical_param(s);
    let ti = check_window(point, spec.horizon, complex, &param)?;
    if let Some((sigma, btol)) = boundary {
        let b = check_boundary(phi, sigma, spec, BOUNDARY_SAMPLES, btol, cfg.seed);
        if !b.equality_holds() {
            return Ok(CheckReport {
                kind: CheckKind::Minimax,
                t: point.t(),
                tau: spec.horizon,
                param,
                tol,
                verdict: Verdict::BoundaryViolated,
                passed: false,
                margin: f64::max(b.max_excess, b.max_deficit),
                evaluations: 0,
                budget: cfg.budget,
                seed: cfg.seed,
                witness: Vec::new(),
            });
        }
    }
    run_check(CheckKind::Minimax, phi, complex, point, &param, ti, tol, cfg, hints)
}

/// One `(point, s, τ)` of [`check_mc`]; the parameters are the complexes'
/// canonical ones for `s`.
#[derive(Clone, Debug)]
pub struct MCSample {
    pub point: HistoryPoint,
    pub s: Vec<f64>,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCRow {
    pub t: f64,
    pub tau: f64,
    pub s: Vec<f64>,
    pub upper: CheckReport,
    pub lower: CheckReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub rows: Vec<MCRow>,
    pub upper_passed: usize,
    pub lower_passed: usize,
    pub passed: bool,
}

/// Upper checks with `upper`, lower checks with `lower`, at every sample.
pub fn check_mc(
    phi: &FunctionalHandle,
    upper: &dyn Complex,
    lower: &dyn Complex,
    samples: &[MCSample],
    tol: f64,
    cfg: &SearchConfig,
    hints: &[SelectorFn],
) -> Result<MCReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for (k, smp) in samples.iter().enumerate() {
        let c = SearchConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
        let up = check_upper(phi, upper, &smp.point, &upper.canonical_param(&smp.s), smp.tau, tol, &c, hints)?;
        let lo = check_lower(phi, lower, &smp.point, &lower.canonical_param(&smp.s), smp.tau, tol, &c, hints)?;
        rows.push(MCRow { t: smp.point.t(), tau: smp.tau, s: smp.s.clone(), upper: up, lower: lo });
    }
    let upper_passed = rows.iter().filter(|r| r.upper.passed).count();
    let lower_passed = rows.iter().filter(|r| r.lower.passed).count();
    let passed = upper_passed == rows.len() && lower_passed == rows.len();
    Ok(MCReport { rows, upper_passed, lower_passed, passed })
}

/// Random `(point, s, τ)` with `t` and `τ` on the grid, `t < τ <= T`.
pub fn mc_samples(spec: crate::path::GridSpec, count: usize, s_scale: f64, seed: u64) -> Vec<MCSample> {
    let mut rng = sampling::rng(seed);
    (0..count)
        .map(|_| {
            let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon - spec.step);
            let path = sampling::random_path(spec, &mut rng, 1.0);
            let point = HistoryPoint::at_index(i, path).expect("node on the grid");
            let j = rng.random_range(i + 1..=spec.last_index());
            let s = vecops::scale(&sampling::gaussian(&mut rng, spec.n), s_scale);
            MCSample { point, s, tau: spec.time(j) }
        })
        .collect()
}

/// Settings of [`viscosity_touch_test`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchConfig {
    /// Number of test functionals.
    pub family: usize,
    /// Neighbourhood probes per test functional.
    pub probes: usize,
    /// Path perturbation scale; probes reach 3 scales in sup norm and 3 grid steps in time.
    pub probe_scale: f64,
    /// Allowed dip below the anchor value when deciding an extremum.
    pub extremum_slack: f64,
    /// Tolerance of the gated inequality.
    pub tol: f64,
    /// `λ` and `ε/ε₀` of the `ν_ε` term.
    pub lambda: f64,
    pub eps_fraction: f64,
    /// Range of `|c|`.
    pub c_range: (f64, f64),
    pub seed: u64,
}

impl Default for TouchConfig {
    fn default() -> Self {
        Self {
            family: 50,
            probes: 200,
            probe_scale: 0.02,
            extremum_slack: 1e-3,
            tol: 0.05,
            lambda: 0.1,
            eps_fraction: 0.8,
            c_range: (5.0, 20.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchVerdict {
    /// The anchor is not a sampled extremum of `φ − ψ`.
    Rejected,
    Pass,
    Fail,
}

/// One test functional `ψ = φ(t₀, x₀) + a(t − t₀) + ⟨b, x(t) − x₀(t₀)⟩ + c(ν_ε(t, x − x₀) − ν_ε(t₀, 0))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchCase {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
    /// Whether `(a, b)` were matched to the fitted ci-derivatives of `φ`.
    pub matched: bool,
    pub extremum: Option<Extremum>,
    /// `∂tψ + H(t₀, x₀, ∇ψ)` at the anchor.
    pub residual: f64,
    pub verdict: TouchVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchReport {
    pub t: f64,
    pub eps: f64,
    pub cases: Vec<TouchCase>,
    pub tested: usize,
    pub failures: usize,
    pub passed: bool,
}

/// Sampled check of the viscosity inequalities at `point`.
///
/// Half of the test functionals match `(a, b)` to the fitted ci-derivatives of
/// `φ` (so they touch at first order) and the rest are offset by unit-scale
/// noise; `c` has random sign and `|c|` in `c_range`. The anchor path `x₀` is
/// the history of `point`, frozen after `t₀`.
pub fn viscosity_touch_test(
    phi: &FunctionalHandle,
    h: &HamiltonianHandle,
    point: &HistoryPoint,
    cfg: &TouchConfig,
) -> Result<TouchReport> {
    let spec = *point.spec();
    if point.is_terminal() {
        return Err(domain!("touch tests need t < T"));
    }
    let n = spec.n;
    let t0 = point.index();
    let x0 = stop_path(point.path(), point.t())?;
    let anchor = HistoryPoint::at_index(t0, x0.clone())?;
    let params = LyapunovParams::new(cfg.lambda, cfg.eps_fraction * lyapunov::eps0(cfg.lambda, spec.horizon), spec.horizon)?;
    let fit = estimate_ci_derivatives(phi, &anchor, &default_schedule(spec.step))?;
    let zero = PathGrid::zeros(spec);
    let zero_hist = History::new(&zero, t0);
    let nu0 = lyapunov::nu(&params, &zero_hist);
    let dnu0 = lyapunov::nu_derivatives(&params, &zero_hist).0;
    let phi0 = phi.eval(&anchor);
    let x_now = x0.node(t0).to_vec();

    let mut rng = sampling::rng(cfg.seed);
    let radius = 3.0 * cfg.probe_scale;
    let lo = t0.saturating_sub(3).max(spec.zero_index());
    let hi = usize::min(t0 + 3, spec.last_index());
    // probe paths shared by all test functionals
    let mut probes: Vec<(usize, PathGrid, PathGrid)> = Vec::with_capacity(cfg.probes);
    for k in 0..cfg.probes {
        let i = if k % 4 == 0 { t0 } else { rng.random_range(lo..=hi) };
        let eta = if k % 4 == 1 { 0.0 } else { rng.random_range(0.0..=radius) };
        let p = sampling::random_path(spec, &mut rng, 1.0);
        let m = p.max_norm_through(spec.last_index()).max(1e-12);
        let dz = vecops::scale(p.samples(), eta / m);
        let z = PathGrid::from_samples(spec, dz)?;
        let x = x0.add(&z)?;
        probes.push((i, x, z));
    }
    let phi_probe: Vec<f64> = probes.iter().map(|(i, x, _)| phi.eval_at(x, *i)).collect();
    let nu_probe: Vec<f64> = probes.iter().map(|(i, _, z)| lyapunov::nu(&params, &History::new(z, *i))).collect();

    let mut cases = Vec::with_capacity(cfg.family);
    for k in 0..cfg.family {
        let mag = rng.random_range(cfg.c_range.0..=cfg.c_range.1);
        let c = if rng.random_bool(0.5) { mag } else { -mag };
        let matched = k % 2 == 0;
        let (da, db) = if matched { (0.0, alloc::vec![0.0; n]) } else { (sampling::gaussian(&mut rng, 1)[0], sampling::gaussian(&mut rng, n)) };
        let a = fit.dt - c * dnu0 + da;
        let b = vecops::add(&fit.grad, &db);
        // ψ(anchor) = φ(anchor), so φ − ψ vanishes there
        let mut lowest = 0.0f64;
        let mut highest = 0.0f64;
        for (j, (i, x, _)) in probes.iter().enumerate() {
            let psi = phi0
                + a * (spec.time(*i) - point.t())
                + vecops::dot(&b, &vecops::sub(x.node(*i), &x_now))
                + c * (nu_probe[j] - nu0);
            let d = phi_probe[j] - psi;
            let d = if d.is_nan() { f64::INFINITY } else { d };
            lowest = f64::min(lowest, d);
            highest = f64::max(highest, d);
        }
        let extremum = if c < 0.0 && lowest >= -cfg.extremum_slack {
            Some(Extremum::Min)
        } else if c > 0.0 && highest <= cfg.extremum_slack && highest.is_finite() {
            Some(Extremum::Max)
        } else {
            None
        };
        let residual = a + c * dnu0 + h.eval(&anchor.history(), &b);
        let verdict = match extremum {
            None => TouchVerdict::Rejected,
            Some(Extremum::Min) if residual <= cfg.tol => TouchVerdict::Pass,
            Some(Extremum::Max) if residual >= -cfg.tol => TouchVerdict::Pass,
            Some(_) => TouchVerdict::Fail,
        };
        cases.push(TouchCase { a, b, c, matched, extremum, residual, verdict });
    }
    let tested = cases.iter().filter(|c| c.verdict != TouchVerdict::Rejected).count();
    let failures = cases.iter().filter(|c| c.verdict == TouchVerdict::Fail).count();
    Ok(TouchReport { t: point.t(), eps: params.eps, cases, tested, failures, passed: failures == 0 })
}

/// `d∓{φ − ⟨s, x(t)⟩ | B} + H` at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCriterion {
    pub t: f64,
    pub s: Vec<f64>,
    /// Should be `<= 0`.
    pub lower: f64,
    /// Should be `>= 0`.
    pub upper: f64,
    pub holds: bool,
}

/// The directional-derivative inequalities with the ball of radius
/// `c(1 + max||x||)`, within `tol`. The outer limit's rate is unknown, so the
/// outcome is informative only.
pub fn directional_criterion(
    phi: &FunctionalHandle,
    h: &HamiltonianHandle,
    point: &HistoryPoint,
    s: &[f64],
    c: f64,
    tol: f64,
    cfg: &DirectionalConfig,
) -> Result<DirectionalCriterion> {
    let shifted = phi.sum(&linear_current(vecops::scale(s, -1.0)));
    let ball = DirectionSet::Ball { radius: c * (1.0 + point.history().sup_norm()) };
    let hs = h.eval(&point.history(), s);
    let lower = directional_derivative(&shifted, point, &ball, Bound::Lower, cfg)?.value + hs;
    let upper = directional_derivative(&shifted, point, &ball, Bound::Upper, cfg)?.value + hs;
    Ok(DirectionalCriterion { t: point.t(), s: s.to_vec(), lower, upper, holds: lower <= tol && upper >= -tol })
}

/// `|a − b| / max(|b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / f64::max(libm::fabs(b), 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub dp: f64,
    pub classical: f64,
    pub oracle: Option<f64>,
    /// DP against classical.
    pub rel: f64,
    /// Worst of DP and classical against the oracle.
    pub rel_oracle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub samples: Vec<ConsistencySample>,
    pub max_rel: f64,
    pub max_rel_oracle: Option<f64>,
    pub tol: f64,
    pub passed: bool,
}

pub type OracleFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// DP value of a problem whose Hamiltonian and boundary functional depend on
/// the current state only, against the lifted classical solution, at `points`.
pub fn consistency_experiment(
    problem: &ControlProblem,
    dp: &DPConfig,
    classical: &ClassicalSolution,
    points: &[HistoryPoint],
    oracle: Option<&OracleFn>,
    tol: f64,
) -> Result<ConsistencyReport> {
    let mut samples = Vec::with_capacity(points.len());
    for p in points {
        let x = p.history().current().to_vec();
        let v = value(problem, p, dp)?.value;
        let cl = classical.eval(p.t(), &x)?;
        let or = oracle.map(|f| f(p.t(), &x));
        let rel_oracle = or.map(|o| f64::max(relative_error(v, o), relative_error(cl, o)));
        samples.push(ConsistencySample { t: p.t(), x, dp: v, classical: cl, oracle: or, rel: relative_error(v, cl), rel_oracle });
    }
    let max_rel = samples.iter().map(|s| s.rel).fold(0.0, f64::max);
    let max_rel_oracle = oracle.map(|_| samples.iter().filter_map(|s| s.rel_oracle).fold(0.0, f64::max));
    let passed = max_rel <= tol && max_rel_oracle.is_none_or(|m| m <= tol);
    Ok(ConsistencyReport { samples, max_rel, max_rel_oracle, tol, passed })
}

/// Points on the grid with `t ∈ [0, T)` whose current states lie in `[−half, half]^n`.
pub fn consistency_points(spec: crate::path::GridSpec, count: usize, half: f64, seed: u64) -> Vec<HistoryPoint> {
    let mut rng = sampling::rng(seed);
    (0..count)
        .map(|_| {
            let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon - spec.step);
            let mut path = sampling::random_path(spec, &mut rng, 0.5);
            let x: Vec<f64> = (0..spec.n).map(|_| rng.random_range(-half..=half)).collect();
            let shift = vecops::sub(&x, path.node(i));
            for j in 0..spec.node_count() {
                vecops::axpy(path.node_mut(j), 1.0, &shift);
            }
            HistoryPoint::at_index(i, path).expect("node on the grid")
        })
        .collect()
}

pub type PerturbFn = Arc<dyn Fn(&History) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityStep {
    pub delta: f64,
    /// `max_points |φ_k − φ_0|`.
    pub deviation: f64,
    /// Per-point deviations, in the order of the points.
    pub per_point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub steps: Vec<StabilityStep>,
    pub decreasing: bool,
    pub final_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// DP values of `H_k = H_0 + δ_k P`, `σ_k = σ_0 + δ_k S` against `δ = 0`.
///
/// Adding `δP` to the Hamiltonian is subtracting it from the running reward
/// `g`. `decreasing` allows `slack` of DP noise between consecutive steps.
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    problem: &ControlProblem,
    p: PerturbFn,
    s: TerminalFn,
    deltas: &[f64],
    points: &[HistoryPoint],
    dp: &DPConfig,
    tol: f64,
    slack: f64,
) -> Result<StabilityReport> {
    if deltas.is_empty() {
        return Err(Error::Precondition("no perturbation sizes".into()));
    }
    let base: Vec<f64> = points.iter().map(|q| value(problem, q, dp).map(|r| r.value)).collect::<Result<_>>()?;
    let mut steps = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let (p, s) = (p.clone(), s.clone());
        let pert = problem.perturbed(move |h| -delta * p(h), move |x| delta * s(x));
        let mut per_point = Vec::with_capacity(points.len());
        for (q, b) in points.iter().zip(&base) {
            per_point.push(libm::fabs(value(&pert, q, dp)?.value - b));
        }
        let deviation = per_point.iter().copied().fold(0.0, f64::max);
        steps.push(StabilityStep { delta, deviation, per_point });
    }
    let decreasing = steps.windows(2).all(|w| w[1].deviation <= w[0].deviation + slack);
    let final_deviation = steps.last().map_or(0.0, |s| s.deviation);
    Ok(StabilityReport { steps, decreasing, final_deviation, tol, passed: decreasing && final_deviation <= tol })
}

/// Free-form summary line of a check.
pub fn describe(r: &CheckReport) -> String {
    format!(
        "{:?} t={:.4} tau={:.4} margin={:.3e} tol={:.3e} evals={}/{} -> {:?}",
        r.kind, r.t, r.tau, r.margin, r.tol, r.evaluations, r.budget, r.verdict
    )
}
