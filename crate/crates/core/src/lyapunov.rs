//! The Lyapunov-type functional `ν_ε = α_ε·β_ε` built on
//! `V = (M² − m²)²/M² + m²`, with `M = ||x||_{[-h,t]}` and `m = ||x(t)||`,
//! and sampled checks of the comparison conditions (a)–(d).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::control::{HamiltonianHandle, TerminalFn};
use crate::error::{domain, Error, Result};
use crate::functional::{verify_integral_identity, FunctionalHandle};
use crate::path::{GridSpec, History, HistoryPoint, PathGrid};
use crate::sampling;
use crate::vecops;

/// `(3 − √5)/2`.
pub const KAPPA: f64 = 0.381_966_011_250_105_1;

/// `V(t, x)`; exactly 0 on the zero history.
pub fn v(h: &History) -> f64 {
    let big = h.sup_norm();
    if big == 0.0 {
        return 0.0;
    }
    let (mm, cc) = (big * big, vecops::dot(h.current(), h.current()));
    let d = mm - cc;
    d * d / mm + cc
}

/// `∇V = (2 − 4(M² − m²)/M²)·x(t)`; `∂_t V = 0`.
pub fn grad_v(h: &History) -> Vec<f64> {
    let big = h.sup_norm();
    if big == 0.0 {
        return alloc::vec![0.0; h.n()];
    }
    let mm = big * big;
    let cc = vecops::dot(h.current(), h.current());
    vecops::scale(h.current(), 2.0 - 4.0 * (mm - cc) / mm)
}

pub fn v_functional() -> FunctionalHandle {
    FunctionalHandle::new("V", v).with_dt(|_: &History| 0.0).with_grad(grad_v).with_node_jump()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub lambda: f64,
    pub eps: f64,
    pub kappa: f64,
    pub eps0: f64,
    pub horizon: f64,
}

/// `e^{−λT/κ}/√κ`.
pub fn eps0(lambda: f64, horizon: f64) -> f64 {
    libm::exp(-lambda * horizon / KAPPA) / libm::sqrt(KAPPA)
}

impl LyapunovParams {
    pub fn new(lambda: f64, eps: f64, horizon: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || !(horizon > 0.0) {
            return Err(domain!("need λ > 0 and T > 0, got λ = {lambda}, T = {horizon}"));
        }
        let e0 = eps0(lambda, horizon);
        if !(eps > 0.0) || eps > e0 * (1.0 + 1e-12) {
            return Err(domain!("ε = {eps} outside (0, ε₀] with ε₀ = {e0}"));
        }
        Ok(Self { lambda, eps, kappa: KAPPA, eps0: e0, horizon })
    }

    /// Parameters at `ε = ε₀`.
    pub fn at_eps0(lambda: f64, horizon: f64) -> Result<Self> {
        Self::new(lambda, eps0(lambda, horizon), horizon)
    }

    fn decay(&self, t: f64) -> f64 {
        libm::exp(-self.lambda * t / self.kappa)
    }

    /// `α_ε(t) = (e^{−λt/κ} − ε√κ)/ε`.
    pub fn alpha(&self, t: f64) -> f64 {
        (self.decay(t) - self.eps * libm::sqrt(self.kappa)) / self.eps
    }

    fn beta(&self, h: &History) -> f64 {
        libm::sqrt(libm::pow(self.eps, 4.0) + v(h))
    }
}

pub fn nu(params: &LyapunovParams, h: &History) -> f64 {
    params.alpha(h.t()) * params.beta(h)
}

pub fn nu_at(params: &LyapunovParams, point: &HistoryPoint) -> f64 {
    nu(params, &point.history())
}

/// `(∂_t ν, ∇ν)` with `∂_t ν = −λe^{−λt/κ}β/(κε)` and `∇ν = α∇V/(2β)`.
pub fn nu_derivatives(params: &LyapunovParams, h: &History) -> (f64, Vec<f64>) {
    let beta = params.beta(h);
    let dt = -params.lambda * params.decay(h.t()) * beta / (params.kappa * params.eps);
    let grad = vecops::scale(&grad_v(h), params.alpha(h.t()) / (2.0 * beta));
    (dt, grad)
}

pub fn nu_functional(params: LyapunovParams) -> FunctionalHandle {
    let (p1, p2, p3) = (params, params, params);
    FunctionalHandle::new(format!("nu[eps={}]", params.eps), move |h: &History| nu(&p1, h))
        .with_dt(move |h: &History| nu_derivatives(&p2, h).0)
        .with_grad(move |h: &History| nu_derivatives(&p3, h).1)
        .with_node_jump()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub samples: usize,
    /// Smallest `V / (κ M²)` over nonzero histories.
    pub min_ratio: f64,
    /// Largest `||∇V|| − 2||x(t)||`.
    pub max_grad_excess: f64,
    pub passed: bool,
}

/// `V >= κ M²` (relative tolerance `1e-9`) and `||∇V|| <= 2||x(t)|| + 1e-12` on random histories.
pub fn check_v_bounds(samples: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = sampling::rng(seed);
    let (mut min_ratio, mut max_excess) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ok = true;
    for k in 0..samples {
        let spec = GridSpec::new(1 + k % 3, 1.0, 1.0, 0.05)?;
        let p = sampling::random_point(spec, &mut rng, 1.0, 0.0, 1.0);
        let h = p.history();
        let big = h.sup_norm();
        let val = v(&h);
        let bound = KAPPA * big * big;
        if big > 0.0 {
            min_ratio = f64::min(min_ratio, val / bound);
        }
        let excess = vecops::norm(&grad_v(&h)) - 2.0 * vecops::norm(h.current());
        max_excess = f64::max(max_excess, excess);
        ok &= val >= bound * (1.0 - 1e-9) && excess <= 1e-12;
    }
    Ok(BoundReport { samples, min_ratio, max_grad_excess: max_excess, passed: ok })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionA {
    pub min_nu: f64,
    pub max_identity_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionB {
    /// Largest `ν(t, 0) − ε`.
    pub max_excess: f64,
    /// Largest deviation from `(e^{−λt/κ} − ε√κ)ε`.
    pub max_formula_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusStep {
    pub eps: f64,
    pub admitted: usize,
    pub max_sigma_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionC {
    pub bound: f64,
    pub sequence: Vec<ModulusStep>,
    pub strictly_decreasing: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionD {
    pub samples: usize,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub coverage: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub lambda: f64,
    pub eps: f64,
    pub eps0: f64,
    pub a: ConditionA,
    pub b: ConditionB,
    pub c: ConditionC,
    pub d: ConditionD,
    pub passed: bool,
}

/// Settings for [`verify_conditions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsConfig {
    pub trials: usize,
    pub seed: u64,
    /// Level `C` in `ν_ε(T, x − y) <= C`.
    pub nu_bound: f64,
    /// Required final value of the modulus sequence.
    pub modulus: f64,
    /// Allowed integral-identity residual per unit of grid step, relative to `1 + |ν|`.
    pub tolerance_a_per_step: f64,
    pub tolerance_d: f64,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 0, nu_bound: 0.1, modulus: 0.5, tolerance_a_per_step: 1.0, tolerance_d: 1e-8 }
    }
}

/// Geometric scales used for the pairs of condition (c).
pub const MODULUS_SCALES: usize = 10;
const MODULUS_FAMILIES: usize = 5;

fn index_history(p: &PathGrid, i: usize) -> History<'_> {
    History::new(p, i)
}

/// Sampled checks of (a)–(d) for `ν_ε` against `H` on the histories `d`.
///
/// (a) positivity and the integral identity along random extensions; (b) the
/// zero-history bound on all grid times; (c) `max |σ(x) − σ(y)|` over pairs with
/// `ν_ε(T, x − y) <= C` for `ε ∈ {ε₀, ε₀/2, ε₀/4, ε₀/8}`, pairs being
/// `y = x + η p` with `η = 0.5·0.6^k`; (d) the comparison inequality on pairs
/// drawn from `d` at random grid times in `[0, T)`.
pub fn verify_conditions(
    params: &LyapunovParams,
    h: &HamiltonianHandle,
    sigma: &TerminalFn,
    d: &[PathGrid],
    cfg: &ConditionsConfig,
) -> Result<ConditionsReport> {
    if d.len() < 2 {
        return Err(Error::Precondition("the sample set needs at least two histories".into()));
    }
    let spec = *d[0].spec();
    for p in d {
        spec.check_same(p.spec())?;
    }
    if libm::fabs(spec.horizon - params.horizon) > 1e-12 {
        return Err(domain!("parameters were built for T = {}, grid has T = {}", params.horizon, spec.horizon));
    }
    let mut rng = sampling::rng(cfg.seed);
    let phi = nu_functional(*params);

    // (a)
    let mut min_nu = f64::INFINITY;
    let mut max_res: f64 = 0.0;
    for k in 0..cfg.trials.min(100) {
        let base = &d[k % d.len()];
        let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon - 2.0 * spec.step);
        let point = HistoryPoint::at_index(i, base.clone())?;
        min_nu = f64::min(min_nu, nu_at(params, &point));
        let sel = sampling::random_selection(&point, &mut rng, 1.0);
        let tau = spec.time(sampling::random_node(&spec, &mut rng, point.t(), spec.horizon - spec.step));
        let res = verify_integral_identity(&phi, &point, &sel, tau)?;
        max_res = f64::max(max_res, res / (1.0 + libm::fabs(nu_at(params, &point))));
    }
    let tol_a = cfg.tolerance_a_per_step * spec.step;
    let a = ConditionA {
        min_nu,
        max_identity_residual: max_res,
        tolerance: tol_a,
        passed: min_nu >= 0.0 && max_res <= tol_a,
    };

    // (b)
    let zero = PathGrid::zeros(spec);
    let (mut max_excess, mut max_formula): (f64, f64) = (f64::NEG_INFINITY, 0.0);
    for i in spec.zero_index()..=spec.last_index() {
        let hz = index_history(&zero, i);
        let val = nu(params, &hz);
        let want = (params.decay(hz.t()) - params.eps * libm::sqrt(params.kappa)) * params.eps;
        max_excess = f64::max(max_excess, val - params.eps);
        max_formula = f64::max(max_formula, libm::fabs(val - want));
    }
    let b = ConditionB { max_excess, max_formula_error: max_formula, passed: max_excess <= 0.0 && max_formula <= 1e-15 };

    // (c)
    let mut pairs = Vec::new();
    for base in d.iter().take(10) {
        for _ in 0..MODULUS_FAMILIES {
            let dir = sampling::random_path(spec, &mut rng, 1.0);
            for k in 0..MODULUS_SCALES {
                let eta = 0.5 * libm::pow(0.6, k as f64);
                let y = base.add(&PathGrid::from_samples(spec, vecops::scale(dir.samples(), eta))?)?;
                let diff = base.sub(&y)?;
                pairs.push((libm::fabs(sigma(base) - sigma(&y)), diff));
            }
        }
    }
    let mut sequence = Vec::new();
    for j in 0..4 {
        let eps = params.eps0 / libm::pow(2.0, j as f64);
        let p = LyapunovParams::new(params.lambda, eps, params.horizon)?;
        let mut admitted = 0;
        let mut gap: f64 = 0.0;
        for (g, diff) in &pairs {
            if nu(&p, &index_history(diff, spec.last_index())) <= cfg.nu_bound {
                admitted += 1;
                gap = f64::max(gap, *g);
            }
        }
        sequence.push(ModulusStep { eps, admitted, max_sigma_gap: gap });
    }
    let strictly = sequence.windows(2).all(|w| w[1].max_sigma_gap < w[0].max_sigma_gap);
    let last = sequence.last().map_or(0.0, |s| s.max_sigma_gap);
    let c = ConditionC { bound: cfg.nu_bound, strictly_decreasing: strictly, passed: strictly && last <= cfg.modulus, sequence };

    // (d)
    let mut worst = f64::NEG_INFINITY;
    let mut samples = 0;
    for _ in 0..cfg.trials {
        let (ia, ib) = (rng_index(&mut rng, d.len()), rng_index(&mut rng, d.len()));
        let i = sampling::random_node(&spec, &mut rng, 0.0, spec.horizon - spec.step);
        let diff = d[ia].sub(&d[ib])?;
        let hd = index_history(&diff, i);
        let (dt, grad) = nu_derivatives(params, &hd);
        let lhs = dt + h.eval(&index_history(&d[ia], i), &grad) - h.eval(&index_history(&d[ib], i), &grad);
        worst = f64::max(worst, lhs);
        samples += 1;
    }
    let dd = ConditionD {
        samples,
        worst_violation: worst,
        tolerance: cfg.tolerance_d,
        coverage: format!("{samples} sampled (t, x, y) with x, y from D ({} histories)", d.len()),
        passed: worst <= cfg.tolerance_d,
    };
    let passed = a.passed && b.passed && c.passed && dd.passed;
    Ok(ConditionsReport { lambda: params.lambda, eps: params.eps, eps0: params.eps0, a, b, c, d: dd, passed })
}

fn rng_index(rng: &mut sampling::SeededRng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

/// `count` random histories on `spec` for use as the set `D`.
pub fn sample_set(spec: GridSpec, count: usize, seed: u64) -> Vec<PathGrid> {
    let mut rng = sampling::rng(seed);
    (0..count).map(|_| sampling::random_path(spec, &mut rng, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::DelayKind;
    use crate::functional::{check_nonanticipative, default_schedule, estimate_ci_derivatives};
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;

    fn spec1() -> GridSpec {
        GridSpec::new(1, 1.0, 1.0, 0.05).unwrap()
    }

    #[test]
    fn kappa_matches_formula() {
        assert_eq!(KAPPA, (3.0 - libm::sqrt(5.0)) / 2.0);
    }

    #[test]
    fn v_examples() {
        let spec = spec1();
        let zero = PathGrid::zeros(spec);
        assert_eq!(v(&History::new(&zero, 25)), 0.0);
        assert_eq!(grad_v(&History::new(&zero, 25)), vec![0.0]);
        let c = PathGrid::constant(GridSpec::new(2, 1.0, 1.0, 0.05).unwrap(), &[0.3, -0.4]);
        let h = History::new(&c, 30);
        assert!((v(&h) - 0.25).abs() < 1e-15);
        assert_eq!(grad_v(&h), vec![0.6, -0.8]);
        // peak 2 at τ = -0.5, current value 1
        let p = PathGrid::from_scalar_fn(spec, |t| if t <= -0.5 { 2.0 + 2.0 * (t + 0.5) } else { 2.0 - 2.0 * (t + 0.5).min(0.5) }).unwrap();
        let h = History::new(&p, spec.index_of(0.5).unwrap());
        assert_eq!(h.current(), &[1.0]);
        assert!((v(&h) - 3.25).abs() < 1e-14);
        assert!(KAPPA * 4.0 <= v(&h));
        assert!((grad_v(&h)[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn nu_examples() {
        let spec = spec1();
        let p = LyapunovParams::at_eps0(1.0, 1.0).unwrap();
        assert!((p.eps0 - 0.118_029_3).abs() < 1e-7);
        let zero = PathGrid::zeros(spec);
        let val = nu(&p, &History::new(&zero, spec.zero_index()));
        assert!((val - 0.109_419_5).abs() < 1e-7);
        assert!(val <= p.eps0);
        assert!(LyapunovParams::new(1.0, p.eps0 * 1.01, 1.0).is_err());
        assert!(LyapunovParams::new(1.0, 0.0, 1.0).is_err());
        let q = LyapunovParams::new(1.0, 0.05, 1.0).unwrap();
        let h = History::new(&zero, 30);
        assert!((nu(&q, &h) - q.alpha(h.t()) * 0.05 * 0.05).abs() < 1e-16);
    }

    #[test]
    fn v_bounds_hold() {
        let rep = check_v_bounds(2000, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.min_ratio >= 1.0 - 1e-9);
    }

    #[test]
    fn nu_decreases_in_time_on_zero_history() {
        let spec = spec1();
        let p = LyapunovParams::new(1.0, 0.05, 1.0).unwrap();
        let zero = PathGrid::zeros(spec);
        let vals: Vec<f64> = (spec.zero_index()..=spec.last_index()).map(|i| nu(&p, &History::new(&zero, i))).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn builtins_are_nonanticipative() {
        let spec = GridSpec::new(2, 1.0, 1.0, 0.05).unwrap();
        assert!(check_nonanticipative(&v_functional(), spec, 50, 1).unwrap().passed);
        let p = LyapunovParams::new(1.0, 0.05, 1.0).unwrap();
        assert!(check_nonanticipative(&nu_functional(p), spec, 50, 2).unwrap().passed);
    }

    fn conditions(delay: DelayKind) -> ConditionsReport {
        let spec = spec1();
        let h = HamiltonianHandle::delayed_linear(delay, &spec).unwrap();
        let d = sample_set(spec, 50, 7);
        let lam = crate::control::check_lipschitz_b3(&h, &d, 2000, 3).unwrap().estimated;
        let params = LyapunovParams::at_eps0(lam, spec.horizon).unwrap();
        let sigma: TerminalFn = Arc::new(|p: &PathGrid| vecops::norm(p.node(p.spec().last_index())));
        verify_conditions(&params, &h, &sigma, &d, &ConditionsConfig::default()).unwrap()
    }

    #[test]
    fn conditions_hold_for_delayed_hamiltonians() {
        for delay in [
            DelayKind::Constant { lag: 1.0 },
            DelayKind::Proportional { ratio: 0.5 },
            DelayKind::Kernel { weight: 0.5, decay: 1.0 },
        ] {
            let rep = conditions(delay.clone());
            assert!(rep.passed, "{delay:?}: {rep:#?}");
        }
    }

    #[test]
    fn path_independent_hamiltonian_passes_d() {
        let spec = spec1();
        let h = HamiltonianHandle::new("sin", 1.0, |h: &History, s: &[f64]| libm::sin(h.t()) * s[0]);
        let d = sample_set(spec, 20, 1);
        let params = LyapunovParams::at_eps0(1.0, 1.0).unwrap();
        let sigma: TerminalFn = Arc::new(|p: &PathGrid| p.node(p.spec().last_index())[0]);
        let rep = verify_conditions(&params, &h, &sigma, &d, &ConditionsConfig { trials: 200, ..Default::default() }).unwrap();
        assert!(rep.d.passed && rep.d.worst_violation <= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn nu_derivatives_match_estimates(seed in 0u64..10_000) {
            let spec = GridSpec::new(2, 1.0, 1.0, 0.01).unwrap();
            let p = LyapunovParams::new(1.0, 0.05, 1.0).unwrap();
            let phi = nu_functional(p);
            let point = sampling::random_point(spec, &mut sampling::rng(seed), 1.0, 0.0, 0.8);
            let est = estimate_ci_derivatives(&phi, &point, &default_schedule(spec.step)).unwrap();
            let (dt, grad) = nu_derivatives(&p, &point.history());
            let tol = f64::max(1e-6, 10.0 * est.residual);
            prop_assert!((est.dt - dt).abs() <= tol * (1.0 + dt.abs()), "{est:?} vs {dt}");
            prop_assert!(vecops::dist(&est.grad, &grad) <= tol * (1.0 + vecops::norm(&grad)));
        }

        #[test]
        fn nu_positive_below_eps0(seed in 0u64..10_000, frac in 0.05f64..0.99) {
            let spec = GridSpec::new(3, 1.0, 1.0, 0.05).unwrap();
            let p = LyapunovParams::new(1.0, frac * eps0(1.0, 1.0), 1.0).unwrap();
            let point = sampling::random_point(spec, &mut sampling::rng(seed), 1.0, 0.0, 1.0);
            prop_assert!(nu_at(&p, &point) > 0.0);
        }
    }
}
