//! Finite-dimensional Hamilton-Jacobi solver `∂_t φ + Ĥ(t, x, ∇φ) = 0`,
//! `φ(T, x) = σ̂(x)`, on a box in `R^n` (`n <= 3`), and its lift to paths.
//!
//! The scheme is backward local Lax-Friedrichs: central gradient plus a
//! dissipation term with coefficient `1.1 × sampled max ||∂Ĥ/∂s||`.
//! Ghost nodes reflect the edge value, which is monotone but only first-order
//! near the box faces; boxes should leave a margin around the states of interest.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::functional::FunctionalHandle;
use crate::path::History;
use crate::sampling;
use crate::vecops;

pub type ClassicalHamiltonianFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type ClassicalTerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Box `[lo, hi]` with `cells[i]` uniform cells along axis `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl SpatialMesh {
    pub fn cube(n: usize, half_width: f64, cells: usize) -> Self {
        Self { lo: alloc::vec![-half_width; n], hi: alloc::vec![half_width; n], cells: alloc::vec![cells; n] }
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn dx(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / self.cells[i] as f64
    }

    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = alloc::vec![1; self.n()];
        for i in 1..self.n() {
            s[i] = s[i - 1] * (self.cells[i - 1] + 1);
        }
        s
    }

    fn coords(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.cells
            .iter()
            .map(|c| {
                let k = rest % (c + 1);
                rest /= c + 1;
                k
            })
            .collect()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.coords(flat).iter().enumerate().map(|(i, &k)| self.lo[i] + k as f64 * self.dx(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.n() && x.iter().enumerate().all(|(i, v)| *v >= self.lo[i] - 1e-12 && *v <= self.hi[i] + 1e-12)
    }

    /// Half-width keeping states that start within `r` inside the box on `[0, T]`,
/// for dynamics with growth constant `c`.
    pub fn gronwall_half_width(r: f64, c: f64, horizon: f64) -> f64 {
        (1.0 + r) * libm::exp(c * horizon) - 1.0
    }
}

#[derive(Clone)]
pub struct ClassicalProblem {
    pub h_hat: ClassicalHamiltonianFn,
    pub sigma_hat: ClassicalTerminalFn,
    pub mesh: SpatialMesh,
    pub horizon: f64,
    /// Time step; adjusted down so that it divides the horizon.
    pub time_step: f64,
    /// Radius of the impulse ball on which the viscosity coefficient is sampled.
    pub s_radius: f64,
    /// Dissipation coefficient, `1.1 ×` the sampled bound.
    pub viscosity: f64,
}

impl core::fmt::Debug for ClassicalProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ClassicalProblem")
            .field("mesh", &self.mesh)
            .field("horizon", &self.horizon)
            .field("time_step", &self.time_step)
            .field("viscosity", &self.viscosity)
            .finish_non_exhaustive()
    }
}

const VISCOSITY_SAMPLES: usize = 400;

/// `1.1 × max ||∂Ĥ/∂s||` by central differences at random `(t, x, s)`.
pub fn sampled_viscosity(h_hat: &ClassicalHamiltonianFn, mesh: &SpatialMesh, horizon: f64, s_radius: f64, seed: u64) -> f64 {
    use rand::Rng;
    let mut rng = sampling::rng(seed);
    let n = mesh.n();
    let fd = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..VISCOSITY_SAMPLES {
        let t = rng.random_range(0.0..=horizon);
        let x: Vec<f64> = (0..n).map(|i| rng.random_range(mesh.lo[i]..=mesh.hi[i])).collect();
        let s = sampling::in_ball(&mut rng, n, s_radius);
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                let (mut a, mut b) = (s.clone(), s.clone());
                a[i] += fd;
                b[i] -= fd;
                (h_hat(t, &x, &a) - h_hat(t, &x, &b)) / (2.0 * fd)
            })
            .collect();
        worst = f64::max(worst, vecops::norm(&grad));
    }
    1.1 * worst
}

impl ClassicalProblem {
    /// Builds the problem; `time_step = None` picks the largest step meeting
    /// `n·α·dt/dx_min <= 0.9`.
    pub fn new(
        h_hat: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        sigma_hat: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        mesh: SpatialMesh,
        horizon: f64,
        time_step: Option<f64>,
        s_radius: f64,
    ) -> Result<Self> {
        let n = mesh.n();
        if !(1..=3).contains(&n) || mesh.hi.len() != n || mesh.cells.len() != n {
            return Err(Error::Construction(format!("box must have matching dimension in 1..=3, got {n}")));
        }
        if mesh.cells.iter().any(|c| *c < 2) || (0..n).any(|i| !(mesh.hi[i] > mesh.lo[i])) {
            return Err(Error::Construction("box needs hi > lo and at least 2 cells per axis".into()));
        }
        if !(horizon > 0.0) || !(s_radius > 0.0) {
            return Err(Error::Construction("horizon and impulse radius must be positive".into()));
        }
        let h_hat: ClassicalHamiltonianFn = Arc::new(h_hat);
        let viscosity = sampled_viscosity(&h_hat, &mesh, horizon, s_radius, 0);
        let dx_min = (0..n).map(|i| mesh.dx(i)).fold(f64::INFINITY, f64::min);
        let requested = match time_step {
            Some(dt) if dt > 0.0 => dt,
            Some(dt) => return Err(Error::Construction(format!("time step {dt} must be positive"))),
            None if viscosity > 0.0 => 0.9 * dx_min / (n as f64 * viscosity),
            None => dx_min,
        };
        let steps = libm::ceil(horizon / requested - 1e-9);
        let dt = horizon / steps;
        let ratio = n as f64 * viscosity * dt / dx_min;
        if ratio > 1.0 + 1e-12 {
            return Err(Error::Construction(format!(
                "CFL violated: n·α·dt/dx = {ratio:.4} > 1 (α = {viscosity:.4}, dt = {dt}, dx = {dx_min})"
            )));
        }
        Ok(Self { h_hat, sigma_hat: Arc::new(sigma_hat), mesh, horizon, time_step: dt, s_radius, viscosity })
    }

    pub fn steps(&self) -> usize {
        libm::round(self.horizon / self.time_step) as usize
    }
}

/// Grid function `φ̂(t_k, x_j)` with `t_k = k·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSolution {
    pub mesh: SpatialMesh,
    pub horizon: f64,
    pub time_step: f64,
    /// `slices[k][j]`.
    pub slices: Vec<Vec<f64>>,
}

/// Marches from `t = T` down to `t = 0`.
pub fn solve_classical(problem: &ClassicalProblem) -> Result<ClassicalSolution> {
    let mesh = &problem.mesh;
    let n = mesh.n();
    let count = mesh.node_count();
    let strides = mesh.strides();
    let dx: Vec<f64> = (0..n).map(|i| mesh.dx(i)).collect();
    let steps = problem.steps();
    let dt = problem.time_step;
    let nodes: Vec<Vec<f64>> = (0..count).map(|j| mesh.node(j)).collect();
    let coords: Vec<Vec<usize>> = (0..count).map(|j| mesh.coords(j)).collect();
    let mut slices = alloc::vec![Vec::new(); steps + 1];
    let mut cur: Vec<f64> = nodes.iter().map(|x| (problem.sigma_hat)(x)).collect();
    if cur.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation { cell: 0, message: "terminal data is not finite".into() });
    }
    slices[steps] = cur.clone();
    let alpha = problem.viscosity;
    for k in (0..steps).rev() {
        let t = (k + 1) as f64 * dt;
        let mut next = alloc::vec![0.0; count];
        for j in 0..count {
            let mut p = alloc::vec![0.0; n];
            let mut diffusion = 0.0;
            for i in 0..n {
                let c = coords[j][i];
                let v0 = cur[j];
                // reflecting ghost nodes keep the update monotone
                let (vm, vp) = if c == 0 {
                    (v0, cur[j + strides[i]])
                } else if c == mesh.cells[i] {
                    (cur[j - strides[i]], v0)
                } else {
                    (cur[j - strides[i]], cur[j + strides[i]])
                };
                p[i] = (vp - vm) / (2.0 * dx[i]);
                diffusion += alpha * (vp - 2.0 * v0 + vm) / (2.0 * dx[i]);
            }
            let hv = (problem.h_hat)(t, &nodes[j], &p);
            if !hv.is_finite() {
                return Err(Error::Evaluation { cell: k, message: format!("Ĥ not finite at {:?}", nodes[j]) });
            }
            next[j] = cur[j] + dt * (hv + diffusion);
        }
        slices[k] = next.clone();
        cur = next;
    }
    Ok(ClassicalSolution { mesh: mesh.clone(), horizon: problem.horizon, time_step: dt, slices })
}

impl ClassicalSolution {
    fn spatial(&self, slice: &[f64], x: &[f64]) -> f64 {
        let n = self.mesh.n();
        let strides = self.mesh.strides();
        let mut base = 0;
        let mut w = alloc::vec![0.0; n];
        for i in 0..n {
            let r = (x[i] - self.mesh.lo[i]) / self.mesh.dx(i);
            let c = (libm::floor(r) as isize).clamp(0, self.mesh.cells[i] as isize - 1) as usize;
            w[i] = (r - c as f64).clamp(0.0, 1.0);
            base += c * strides[i];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut idx = base;
            for i in 0..n {
                if corner >> i & 1 == 1 {
                    weight *= w[i];
                    idx += strides[i];
                } else {
                    weight *= 1.0 - w[i];
                }
            }
            if weight != 0.0 {
                acc += weight * slice[idx];
            }
        }
        acc
    }

    /// `φ̂(t, x)`, linear in `t` between slices and multilinear in `x`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        if !self.mesh.contains(x) {
            return Err(domain!("state {x:?} outside the box [{:?}, {:?}]", self.mesh.lo, self.mesh.hi));
        }
        if !(t >= -1e-12 && t <= self.horizon + 1e-12) {
            return Err(domain!("time {t} outside [0, {}]", self.horizon));
        }
        let r = (t / self.time_step).clamp(0.0, (self.slices.len() - 1) as f64);
        let k = libm::floor(r) as usize;
        let w = r - k as f64;
        let a = self.spatial(&self.slices[k], x);
        if w < 1e-12 || k + 1 >= self.slices.len() {
            return Ok(a);
        }
        Ok((1.0 - w) * a + w * self.spatial(&self.slices[k + 1], x))
    }

    /// Rows `(t, x, φ̂)` over all slices and nodes.
    pub fn rows(&self) -> impl Iterator<Item = (f64, Vec<f64>, f64)> + '_ {
        self.slices.iter().enumerate().flat_map(move |(k, s)| {
            let t = k as f64 * self.time_step;
            s.iter().enumerate().map(move |(j, v)| (t, self.mesh.node(j), *v))
        })
    }
}

/// `φ(t, x(·)) = φ̂(t, x(t))`; states outside the box evaluate to NaN.
pub fn lift_to_path(solution: &ClassicalSolution) -> FunctionalHandle {
    let sol = solution.clone();
    FunctionalHandle::new("lifted_classical", move |h: &History| sol.eval(h.t(), h.current()).unwrap_or(f64::NAN))
        .with_node_jump()
}

/// `Ĥ(s) = −speed·||s||`, `σ̂ = ||x||` on the cube `[−half, half]^n`.
pub fn hopf_lax_classical(n: usize, speed: f64, horizon: f64, half: f64, cells: usize) -> Result<ClassicalProblem> {
    ClassicalProblem::new(
        move |_: f64, _: &[f64], s: &[f64]| -speed * vecops::norm(s),
        vecops::norm,
        SpatialMesh::cube(n, half, cells),
        horizon,
        None,
        2.0,
    )
}

/// `Ĥ(s) = speed·s`, `σ̂ = sin x` in one dimension.
pub fn transport_classical(speed: f64, horizon: f64, half: f64, cells: usize) -> Result<ClassicalProblem> {
    ClassicalProblem::new(
        move |_: f64, _: &[f64], s: &[f64]| s[0] * speed,
        |x: &[f64]| libm::sin(x[0]),
        SpatialMesh::cube(1, half, cells),
        horizon,
        None,
        2.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{check_nonanticipative, vertical_derivative_estimate};
    use crate::path::{GridSpec, HistoryPoint};
    use alloc::vec;
    use proptest::prelude::*;

    fn transport(cells: usize, b: f64) -> ClassicalProblem {
        ClassicalProblem::new(
            move |_: f64, _: &[f64], s: &[f64]| s[0] * b,
            |x: &[f64]| libm::sin(x[0]),
            SpatialMesh::cube(1, 3.0, cells),
            1.0,
            None,
            2.0,
        )
        .unwrap()
    }

    fn interior_error(sol: &ClassicalSolution, b: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..sol.slices.len() {
            let t = k as f64 * sol.time_step;
            for j in 0..sol.mesh.node_count() {
                let x = sol.mesh.node(j);
                if x[0].abs() <= 2.0 {
                    worst = worst.max((sol.slices[k][j] - libm::sin(x[0] + b * (1.0 - t))).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn frozen_when_hamiltonian_vanishes() {
        let p = ClassicalProblem::new(|_: f64, _: &[f64], _: &[f64]| 0.0, |x: &[f64]| x[0] * x[0], SpatialMesh::cube(1, 1.0, 20), 1.0, Some(0.1), 1.0).unwrap();
        assert_eq!(p.viscosity, 0.0);
        let sol = solve_classical(&p).unwrap();
        for s in &sol.slices {
            assert_eq!(s, &sol.slices[sol.slices.len() - 1]);
        }
    }

    #[test]
    fn transport_converges_at_first_order() {
        let b = 0.5;
        let errs: Vec<f64> = [60, 120, 240].iter().map(|&c| interior_error(&solve_classical(&transport(c, b)).unwrap(), b)).collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.5..=2.5).contains(&r), "{errs:?}");
        }
    }

    #[test]
    fn boundary_is_exact() {
        let sol = solve_classical(&transport(40, 0.5)).unwrap();
        let last = sol.slices.last().unwrap();
        for (j, v) in last.iter().enumerate() {
            assert_eq!(*v, libm::sin(sol.mesh.node(j)[0]));
        }
    }

    #[test]
    fn hopf_lax_oracle() {
        for n in [1, 2] {
            let cells = if n == 1 { 300 } else { 120 };
            let p = ClassicalProblem::new(
                |_: f64, _: &[f64], s: &[f64]| -vecops::norm(s),
                |x: &[f64]| vecops::norm(x),
                SpatialMesh::cube(n, 3.0, cells),
                0.5,
                None,
                2.0,
            )
            .unwrap();
            let sol = solve_classical(&p).unwrap();
            for x in [vec![0.9; n], vec![-0.3; n], vec![1.2; n]] {
                let want = f64::max(vecops::norm(&x) - 0.5, 0.0);
                let got = sol.eval(0.0, &x).unwrap();
                assert!((got - want).abs() < 0.1, "n = {n}, x = {x:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let err = ClassicalProblem::new(|_: f64, _: &[f64], s: &[f64]| s[0], |x: &[f64]| x[0], SpatialMesh::cube(1, 1.0, 10), 1.0, Some(1.0), 1.0);
        assert!(matches!(err, Err(Error::Construction(_))));
        assert!(ClassicalProblem::new(|_: f64, _: &[f64], _: &[f64]| 0.0, |x: &[f64]| x[0], SpatialMesh::cube(4, 1.0, 4), 1.0, None, 1.0).is_err());
    }

    #[test]
    fn lift_examples() {
        let spec = GridSpec::new(1, 1.0, 1.0, 0.05).unwrap();
        let c = ClassicalProblem::new(|_: f64, _: &[f64], _: &[f64]| 0.0, |_: &[f64]| 2.5, SpatialMesh::cube(1, 3.0, 10), 1.0, None, 1.0).unwrap();
        let phi = lift_to_path(&solve_classical(&c).unwrap());
        let pt = sampling::random_point(spec, &mut sampling::rng(1), 0.5, 0.0, 1.0);
        assert_eq!(phi.eval(&pt), 2.5);

        let sol = solve_classical(&transport(120, 0.5)).unwrap();
        let phi = lift_to_path(&sol);
        assert!(check_nonanticipative(&phi, spec, 50, 2).unwrap().passed);
        let path = sampling::random_path(spec, &mut sampling::rng(3), 0.5);
        let end = HistoryPoint::new(1.0, path.clone()).unwrap();
        let dx = sol.mesh.dx(0);
        assert!((phi.eval(&end) - libm::sin(path.node(spec.last_index())[0])).abs() <= dx * dx / 8.0);
        let on_node = HistoryPoint::new(1.0, PathGrid::constant(spec, &[sol.mesh.node(70)[0]])).unwrap();
        assert_eq!(phi.eval(&on_node), libm::sin(sol.mesh.node(70)[0]));
        let mid = HistoryPoint::new(0.5, PathGrid::constant(spec, &[0.3])).unwrap();
        let g = vertical_derivative_estimate(&phi, &mid, &[0.04, 0.02, 0.01]).unwrap();
        let fd = (sol.eval(0.5, &[0.31]).unwrap() - sol.eval(0.5, &[0.29]).unwrap()) / 0.02;
        assert!((g[0] - fd).abs() < 1e-2, "{g:?} vs {fd}");
        let far = HistoryPoint::new(0.5, PathGrid::constant(spec, &[10.0])).unwrap();
        assert!(phi.eval(&far).is_nan());
        assert!(sol.eval(0.5, &[10.0]).is_err());
    }

    use crate::path::PathGrid;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn scheme_is_monotone(seed in 0u64..10_000, lift in 0.0f64..1.0, centre in -1.0f64..1.0) {
            let base = move |x: &[f64]| libm::sin(2.0 * x[0]) + 0.1 * x[0] * x[0];
            let bump = move |x: &[f64]| base(x) + lift * libm::exp(-(x[0] - centre) * (x[0] - centre));
            let h = move |_: f64, x: &[f64], s: &[f64]| -libm::fabs(s[0]) + 0.3 * s[0] * libm::sin(x[0] + seed as f64);
            let lo = solve_classical(&ClassicalProblem::new(h, base, SpatialMesh::cube(1, 2.0, 60), 0.5, None, 3.0).unwrap()).unwrap();
            let hi = solve_classical(&ClassicalProblem::new(h, bump, SpatialMesh::cube(1, 2.0, 60), 0.5, None, 3.0).unwrap()).unwrap();
            for (a, b) in lo.slices.iter().zip(&hi.slices) {
                for (u, v) in a.iter().zip(b) {
                    prop_assert!(u <= &(v + 1e-12));
                }
            }
        }
    }
}
