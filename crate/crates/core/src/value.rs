//! Value functional of the retarded control problem by exhaustive dynamic
//! programming over piecewise-constant controls, plus analytic oracles.
//!
//! The state is a whole history, so nothing recombines: the tree over
//! decision cells is enumerated in full, one mutable path buffer per search.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::control::{
    linear_problem, Coefficients, ControlProblem, DelayKind, RunningKind, TerminalKind,
};
use crate::error::{domain, Error, Result};
use crate::functional::FunctionalHandle;
use crate::path::{stop_at, stop_path, GridSpec, History, HistoryPoint, PathGrid};
use crate::sampling;
use crate::vecops;

pub const DEFAULT_LEAF_CAP: u128 = 10_000_000;

/// A-priori constants for branch-and-bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneBounds {
    /// Lipschitz constant of `σ` in the uniform norm.
    pub sigma_lipschitz: f64,
    /// Bound on `|g|`.
    pub running_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DPConfig {
    /// Length of a decision cell; a multiple of the grid step.
    pub coarse_step: f64,
    pub max_depth: usize,
    /// Enables pruning: a subtree is skipped when its lower bound exceeds the best value by this much.
    pub prune_tolerance: Option<f64>,
    /// Bounds for pruning; estimated by sampling when absent.
    pub prune_bounds: Option<PruneBounds>,
    pub leaf_cap: u128,
}

impl DPConfig {
    pub fn new(coarse_step: f64, max_depth: usize) -> Self {
        Self { coarse_step, max_depth, prune_tolerance: None, prune_bounds: None, leaf_cap: DEFAULT_LEAF_CAP }
    }

    fn cells_per_stage(&self, spec: &GridSpec) -> Result<usize> {
        let r = self.coarse_step / spec.step;
        let k = libm::round(r);
        if !(k >= 1.0) || libm::fabs(r - k) > 1e-7 * k {
            return Err(domain!("coarse step {} is not a positive multiple of the step {}", self.coarse_step, spec.step));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub t: f64,
    pub value: f64,
    pub leaves_evaluated: u64,
    pub config: DPConfig,
}

struct Search<'p> {
    problem: &'p ControlProblem,
    k: usize,
    leaves: u64,
    prune: Option<(f64, PruneBounds)>,
}

impl Search<'_> {
    /// `min` over control sequences on `[idx, end]` of `leaf(path) − ∫ g`.
    fn run(
        &mut self,
        path: &mut PathGrid,
        idx: usize,
        end: usize,
        leaf: &mut dyn FnMut(&PathGrid, u64) -> Result<f64>,
    ) -> Result<f64> {
        if idx == end {
            self.leaves += 1;
            return leaf(path, self.leaves);
        }
        let next = usize::min(idx + self.k, end);
        let mut best = f64::INFINITY;
        for u in 0..self.problem.controls.len() {
            let run = self.problem.advance(path, idx, next, &self.problem.controls[u])?;
            if let Some((tol, b)) = self.prune {
                if best.is_finite() && self.lower_bound(path, next, &b) - run > best + tol {
                    continue;
                }
            }
            let v = -run + self.run(path, next, end, leaf)?;
            if v < best {
                best = v;
            }
        }
        Ok(best)
    }

    /// Gronwall bound on the remaining deviation, through `σ`'s Lipschitz constant.
    fn lower_bound(&self, path: &PathGrid, idx: usize, b: &PruneBounds) -> f64 {
        let spec = self.problem.spec;
        let rest = spec.horizon - spec.time(idx);
        let m = path.max_norm_through(idx);
        let drift = (1.0 + m) * (libm::exp(self.problem.c * rest) - 1.0);
        let frozen = stop_at(path, idx);
        (self.problem.sigma)(&frozen) - b.sigma_lipschitz * drift - b.running_bound * rest
    }
}

fn stage_count(cells: usize, k: usize) -> usize {
    cells.div_ceil(k)
}

fn check_budget(problem: &ControlProblem, cells: usize, cfg: &DPConfig, k: usize) -> Result<()> {
    let stages = stage_count(cells, k);
    if stages > cfg.max_depth {
        return Err(Error::Precondition(format!(
            "{stages} decision cells needed, max_depth is {}",
            cfg.max_depth
        )));
    }
    let m = problem.controls.len() as u128;
    let mut leaves: u128 = 1;
    for _ in 0..stages {
        leaves = leaves.saturating_mul(m);
    }
    if leaves > cfg.leaf_cap {
        return Err(Error::Resource { leaves, cap: cfg.leaf_cap });
    }
    Ok(())
}

/// Sampled estimates of `σ`'s Lipschitz constant and `sup |g|`, inflated by 1.5.
pub fn estimate_prune_bounds(problem: &ControlProblem, trials: usize, seed: u64) -> PruneBounds {
    let spec = problem.spec;
    let mut rng = sampling::rng(seed);
    let (mut lip, mut gmax): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let a = sampling::random_path(spec, &mut rng, 1.0);
        let b = sampling::random_path(spec, &mut rng, 1.0);
        let d = a.sub(&b).expect("same grid").max_norm_through(spec.last_index());
        if d > 1e-9 {
            lip = f64::max(lip, libm::fabs((problem.sigma)(&a) - (problem.sigma)(&b)) / d);
        }
        let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon);
        for u in &problem.controls {
            gmax = f64::max(gmax, libm::fabs((problem.g)(&History::new(&a, i), u)));
        }
    }
    PruneBounds { sigma_lipschitz: 1.5 * lip, running_bound: 1.5 * gmax }
}

fn search<'p>(problem: &'p ControlProblem, cfg: &DPConfig, k: usize) -> Search<'p> {
    let prune = cfg.prune_tolerance.map(|tol| (tol, cfg.prune_bounds.unwrap_or_else(|| estimate_prune_bounds(problem, 200, 0))));
    Search { problem, k, leaves: 0, prune }
}

/// Infimum of the cost over controls constant on decision cells counted from `t`;
/// the last cell may be shorter. At `t = T` this is `σ(x)`.
pub fn value(problem: &ControlProblem, point: &HistoryPoint, cfg: &DPConfig) -> Result<ValueResult> {
    problem.spec.check_same(point.spec())?;
    let spec = problem.spec;
    let k = cfg.cells_per_stage(&spec)?;
    let cells = spec.last_index() - point.index();
    check_budget(problem, cells, cfg, k)?;
    let mut path = stop_path(point.path(), point.t())?;
    let mut s = search(problem, cfg, k);
    let sigma = problem.sigma.clone();
    let v = s.run(&mut path, point.index(), spec.last_index(), &mut |p: &PathGrid, _| Ok(sigma(p)))?;
    Ok(ValueResult { t: point.t(), value: v, leaves_evaluated: s.leaves, config: cfg.clone() })
}

/// `|value(t, x) − min_u [value(τ, y_u) − ∫_t^τ g]|`, the inner minimum over
/// decision cells from `t` up to `τ`. Exact (up to rounding) when `τ` is a
/// decision boundary; `τ` only needs to lie on the grid.
pub fn check_dpp(problem: &ControlProblem, point: &HistoryPoint, tau: f64, cfg: &DPConfig) -> Result<f64> {
    let spec = problem.spec;
    if !(tau > point.t()) || tau > spec.horizon + 1e-12 {
        return Err(domain!("need t < τ <= T, got t = {}, τ = {tau}", point.t()));
    }
    let ti = spec.index_of(tau)?;
    let k = cfg.cells_per_stage(&spec)?;
    let lhs = value(problem, point, cfg)?.value;
    check_budget(problem, ti - point.index(), cfg, k)?;
    let mut path = stop_path(point.path(), point.t())?;
    let mut s = search(problem, cfg, k);
    let rhs = s.run(&mut path, point.index(), ti, &mut |p: &PathGrid, _| {
        let q = HistoryPoint::at_index(ti, p.clone())?;
        Ok(value(problem, &q, cfg)?.value)
    })?;
    Ok(libm::fabs(lhs - rhs))
}

/// The value as a functional of `(t, x(·))`; failures evaluate to NaN.
pub fn value_functional(problem: &ControlProblem, cfg: &DPConfig) -> FunctionalHandle {
    let (p, c) = (problem.clone(), cfg.clone());
    FunctionalHandle::new(format!("value:{}", problem.name), move |h: &History| {
        HistoryPoint::at_index(h.index(), h.full_path().clone())
            .and_then(|q| value(&p, &q, &c))
            .map_or(f64::NAN, |r| r.value)
    })
}

pub type ForcingFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// `ẏ(τ) = A y(τ) + B y(τ − lag) + b(τ)`, matrices row-major.
#[derive(Clone)]
pub struct LinearDelay {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub lag: f64,
    pub forcing: Option<ForcingFn>,
}

impl core::fmt::Debug for LinearDelay {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LinearDelay").field("a", &self.a).field("b", &self.b).field("lag", &self.lag).finish_non_exhaustive()
    }
}

pub const SUBSTEPS: usize = 100;

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| vecops::dot(&m[i * n..(i + 1) * n], x)).collect()
}

/// Reference solution by Crank-Nicolson on a grid 100 times finer, with the
/// delayed term read by linear interpolation of the fine solution. For `A = 0`
/// and a lag on the grid the scheme integrates piecewise-linear delayed terms exactly.
pub fn method_of_steps(sys: &LinearDelay, point: &HistoryPoint) -> Result<PathGrid> {
    let spec = *point.spec();
    let n = spec.n;
    if sys.a.len() != n * n || sys.b.len() != n * n {
        return Err(domain!("matrices must be {n}x{n}"));
    }
    if !(sys.lag > 0.0) || sys.lag > spec.h + 1e-12 {
        return Err(domain!("lag {} must lie in (0, h]", sys.lag));
    }
    let dt = spec.step / SUBSTEPS as f64;
    let fine_lag = sys.lag / dt;
    let lag_nodes = libm::round(fine_lag);
    let aligned = libm::fabs(fine_lag - lag_nodes) < 1e-6;
    let x = point.path();
    let t0 = point.t();
    let steps = (spec.last_index() - point.index()) * SUBSTEPS;
    let mut fine: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    fine.push(x.node(point.index()).to_vec());
    // delayed value at time s: history before t0, fine solution after
    let delayed = |fine: &Vec<Vec<f64>>, k: usize| -> Vec<f64> {
        let s = t0 + k as f64 * dt - sys.lag;
        if s <= t0 {
            return x.value_at(s).expect("lag within h");
        }
        let r = if aligned { k as f64 - lag_nodes } else { (s - t0) / dt };
        let j = libm::floor(r) as usize;
        let w = r - j as f64;
        if w < 1e-12 || j + 1 >= fine.len() {
            return fine[j.min(fine.len() - 1)].clone();
        }
        let mut v = vecops::scale(&fine[j], 1.0 - w);
        vecops::axpy(&mut v, w, &fine[j + 1]);
        v
    };
    let forcing = |s: f64| sys.forcing.as_ref().map_or_else(|| alloc::vec![0.0; n], |f| f(s));
    let mut lhs = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            lhs[i * n + j] = if i == j { 1.0 } else { 0.0 } - 0.5 * dt * sys.a[i * n + j];
        }
    }
    for k in 0..steps {
        let y = &fine[k];
        let d0 = delayed(&fine, k);
        // the delayed argument at k + 1 is known: lag >= dt
        let d1 = delayed(&fine, k + 1);
        let (s0, s1) = (t0 + k as f64 * dt, t0 + (k + 1) as f64 * dt);
        let mut rhs = y.clone();
        vecops::axpy(&mut rhs, 0.5 * dt, &matvec(&sys.a, y));
        vecops::axpy(&mut rhs, 0.5 * dt, &vecops::add(&matvec(&sys.b, &d0), &matvec(&sys.b, &d1)));
        vecops::axpy(&mut rhs, 0.5 * dt, &vecops::add(&forcing(s0), &forcing(s1)));
        let next = vecops::solve(lhs.clone(), rhs).ok_or_else(|| Error::Evaluation { cell: k / SUBSTEPS, message: "singular implicit step".into() })?;
        fine.push(next);
    }
    let mut out = stop_path(x, t0)?;
    for (c, i) in (point.index()..=spec.last_index()).enumerate() {
        out.node_mut(i).copy_from_slice(&fine[c * SUBSTEPS]);
    }
    Ok(out)
}

/// `max(||x|| − speed·(T − t), 0)`: the value with `ẏ = u`, `||u|| <= speed`, `σ = ||y(T)||`.
pub fn hopf_lax_value(x: &[f64], t: f64, horizon: f64, speed: f64) -> f64 {
    f64::max(vecops::norm(x) - speed * (horizon - t), 0.0)
}

/// Uncontrolled `ẏ = y(τ − 1)`, `σ = y(T)`, `g = 0`, `h = 1`, `T = 2`, from `x ≡ 1` at `t = 0`.
/// The exact terminal value is `3.5`.
pub fn delay_scenario(step: f64) -> Result<(ControlProblem, HistoryPoint)> {
    let spec = GridSpec::new(1, 1.0, 2.0, step)?;
    let problem = linear_problem(
        spec,
        DelayKind::Constant { lag: 1.0 },
        Coefficients { a: 0.0, b: 1.0, gain: 0.0 },
        alloc::vec![alloc::vec![0.0]],
        1.0,
        TerminalKind::FirstCoordinate,
        RunningKind::Zero,
    )?;
    let point = HistoryPoint::new(0.0, PathGrid::constant(spec, &[1.0]))?;
    Ok((problem, point))
}

pub const DELAY_SCENARIO_VALUE: f64 = 3.5;

/// `ẏ = u`, `u ∈ {−1, 1}`, `σ = |y(T)|`, `g = 0` in one dimension.
pub fn hopf_lax_scenario(h: f64, horizon: f64, step: f64) -> Result<ControlProblem> {
    let spec = GridSpec::new(1, h, horizon, step)?;
    linear_problem(
        spec,
        DelayKind::None,
        Coefficients { a: 0.0, b: 0.0, gain: 1.0 },
        alloc::vec![alloc::vec![-1.0], alloc::vec![1.0]],
        1.0,
        TerminalKind::Norm,
        RunningKind::Zero,
    )
}

/// As [`hopf_lax_scenario`] with the rest control `u = 0` added, which removes
/// the parity error of the two-speed control set.
pub fn hopf_lax_scenario_with_rest(h: f64, horizon: f64, step: f64) -> Result<ControlProblem> {
    let mut p = hopf_lax_scenario(h, horizon, step)?;
    p.controls.insert(1, alloc::vec![0.0]);
    p.name = "hopf_lax_rest".into();
    Ok(p)
}

/// Uncontrolled `ẏ = speed`, `σ = sin(y(T))`, `g = 0`; the value is `sin(x(t) + speed·(T − t))`.
pub fn transport_scenario(speed: f64, h: f64, horizon: f64, step: f64) -> Result<ControlProblem> {
    let spec = GridSpec::new(1, h, horizon, step)?;
    let mut p = linear_problem(
        spec,
        DelayKind::None,
        Coefficients { a: 0.0, b: 0.0, gain: 1.0 },
        alloc::vec![alloc::vec![speed]],
        f64::max(libm::fabs(speed), 1.0),
        TerminalKind::Sine,
        RunningKind::Zero,
    )?;
    p.name = "transport".into();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::check_nonanticipative;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn terminal_value_is_sigma() {
        let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
        let path = sampling::random_path(p.spec, &mut sampling::rng(1), 1.0);
        let pt = HistoryPoint::new(1.0, path.clone()).unwrap();
        let r = value(&p, &pt, &DPConfig::new(0.1, 10)).unwrap();
        assert_eq!(r.value, (p.sigma)(&path));
        assert_eq!(r.leaves_evaluated, 1);
    }

    #[test]
    fn delay_scenario_converges_at_first_order() {
        let mut errs = vec![];
        for step in [0.02, 0.01, 0.005] {
            let (p, pt) = delay_scenario(step).unwrap();
            let v = value(&p, &pt, &DPConfig::new(2.0, 1)).unwrap().value;
            errs.push((v - DELAY_SCENARIO_VALUE).abs());
        }
        assert!(errs[1] / DELAY_SCENARIO_VALUE < 0.02);
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..=2.3).contains(&r), "{errs:?}");
        }
    }

    #[test]
    fn method_of_steps_examples() {
        let (_, pt) = delay_scenario(0.05).unwrap();
        let zero = LinearDelay { a: vec![0.0], b: vec![0.0], lag: 1.0, forcing: None };
        assert_eq!(method_of_steps(&zero, &pt).unwrap(), stop_path(pt.path(), 0.0).unwrap());
        let sys = LinearDelay { a: vec![0.0], b: vec![1.0], lag: 1.0, forcing: None };
        let y = method_of_steps(&sys, &pt).unwrap();
        assert!((y.node(y.spec().last_index())[0] - 3.5).abs() < 1e-12);
        let forced = LinearDelay { a: vec![0.0], b: vec![0.0], lag: 1.0, forcing: Some(Arc::new(|_| vec![1.0])) };
        let y = method_of_steps(&forced, &pt).unwrap();
        for i in pt.index()..=y.spec().last_index() {
            assert!((y.node(i)[0] - (1.0 + y.spec().time(i))).abs() < 1e-12);
        }
        // A ≠ 0, no delay: y' = -y, y(2) = e^{-2}
        let decay = LinearDelay { a: vec![-1.0], b: vec![0.0], lag: 1.0, forcing: None };
        let y = method_of_steps(&decay, &pt).unwrap();
        assert!((y.node(y.spec().last_index())[0] - libm::exp(-2.0)).abs() < 1e-8);
    }

    #[test]
    fn hopf_lax_oracle() {
        let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
        let cfg = DPConfig::new(0.1, 10);
        let mut r = sampling::rng(4);
        for _ in 0..10 {
            let pt = sampling::random_point(p.spec, &mut r, 1.0, 0.0, 0.9);
            let v = value(&p, &pt, &cfg).unwrap().value;
            let want = hopf_lax_value(pt.history().current(), pt.t(), 1.0, 1.0);
            assert!((v - want).abs() <= 3.0 * cfg.coarse_step, "{v} vs {want}");
        }
    }

    #[test]
    fn dpp_residuals() {
        let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
        let cfg = DPConfig::new(0.1, 10);
        let pt = HistoryPoint::new(0.2, PathGrid::constant(p.spec, &[0.3])).unwrap();
        for tau in [0.3, 0.5, 1.0] {
            assert!(check_dpp(&p, &pt, tau, &cfg).unwrap() <= 1e-12);
        }
        assert!(check_dpp(&p, &pt, 0.55, &cfg).unwrap() <= 2.0 * cfg.coarse_step);
        assert!(check_dpp(&p, &pt, 0.2, &cfg).is_err());
        assert!(check_dpp(&p, &pt, 0.525, &cfg).is_err());
    }

    #[test]
    fn resource_cap_is_enforced() {
        let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
        let pt = HistoryPoint::new(0.0, PathGrid::zeros(p.spec)).unwrap();
        let mut cfg = DPConfig::new(0.05, 20);
        cfg.leaf_cap = 1000;
        assert!(matches!(value(&p, &pt, &cfg), Err(Error::Resource { .. })));
        assert!(matches!(value(&p, &pt, &DPConfig::new(0.05, 5)), Err(Error::Precondition(_))));
    }

    #[test]
    fn pruning_keeps_the_value() {
        let p = linear_problem(
            GridSpec::new(1, 0.5, 1.0, 0.05).unwrap(),
            DelayKind::Constant { lag: 0.5 },
            Coefficients { a: 0.0, b: 0.5, gain: 1.0 },
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            1.5,
            TerminalKind::Norm,
            RunningKind::Quadratic { weight: 0.2 },
        )
        .unwrap();
        let pt = sampling::random_point(p.spec, &mut sampling::rng(9), 1.0, 0.0, 0.3);
        let plain = value(&p, &pt, &DPConfig::new(0.1, 10)).unwrap();
        let mut cfg = DPConfig::new(0.1, 10);
        cfg.prune_tolerance = Some(0.0);
        let pruned = value(&p, &pt, &cfg).unwrap();
        assert!((plain.value - pruned.value).abs() < 1e-12);
        assert!(pruned.leaves_evaluated <= plain.leaves_evaluated);
    }

    #[test]
    fn value_is_nonanticipative() {
        let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
        let phi = value_functional(&p, &DPConfig::new(0.1, 10));
        let rep = check_nonanticipative(&phi, p.spec, 50, 3).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn refining_decisions_never_raises_value(seed in 0u64..10_000) {
            let p = linear_problem(
                GridSpec::new(1, 0.5, 0.8, 0.05).unwrap(),
                DelayKind::Constant { lag: 0.25 },
                Coefficients { a: -0.3, b: 0.5, gain: 1.0 },
                vec![vec![-1.0], vec![1.0]],
                2.0,
                TerminalKind::Sine,
                RunningKind::Quadratic { weight: 0.3 },
            ).unwrap();
            let pt = sampling::random_point(p.spec, &mut sampling::rng(seed), 1.0, 0.0, 0.4);
            let coarse = value(&p, &pt, &DPConfig::new(0.2, 10)).unwrap().value;
            let fine = value(&p, &pt, &DPConfig::new(0.1, 10)).unwrap().value;
            prop_assert!(fine <= coarse + 1e-12);
        }

        #[test]
        fn value_is_monotone_in_sigma(seed in 0u64..10_000, shift in 0.0f64..1.0) {
            let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
            let q = p.perturbed(|_: &History| 0.0, move |y: &PathGrid| shift * (1.0 + libm::sin(y.node(y.spec().last_index())[0])));
            let pt = sampling::random_point(p.spec, &mut sampling::rng(seed), 1.0, 0.0, 0.9);
            let cfg = DPConfig::new(0.1, 10);
            prop_assert!(value(&p, &pt, &cfg).unwrap().value <= value(&q, &pt, &cfg).unwrap().value);
        }

        #[test]
        fn equal_histories_give_equal_values(seed in 0u64..10_000) {
            let p = hopf_lax_scenario(0.5, 1.0, 0.05).unwrap();
            let mut r = sampling::rng(seed);
            let pt = sampling::random_point(p.spec, &mut r, 1.0, 0.0, 0.9);
            let other = sampling::perturb_after(pt.path(), pt.index(), &mut r, 1.0);
            let q = HistoryPoint::at_index(pt.index(), other).unwrap();
            let cfg = DPConfig::new(0.1, 10);
            prop_assert_eq!(value(&p, &pt, &cfg).unwrap().value, value(&p, &q, &cfg).unwrap().value);
        }
    }
}
