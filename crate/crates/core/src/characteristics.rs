//! Characteristic inclusions and characteristic complexes.
//!
//! A complex is a parameterized set-valued map `(τ, y, q) ↦ E(τ, y, q) ⊂ R^n × R`.
//! Sets are accessed through a selector, which maps a point `b` of the closed
//! unit ball onto the set, and through an extreme-point mesh used for brute
//! force support computations.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::control::HamiltonianHandle;
use crate::error::{domain, Error, Result};
use crate::functional::richardson;
use crate::path::{stop_path, GridSpec, History, HistoryPoint, PathGrid};
use crate::sampling;
use crate::vecops;

const MEMBERSHIP_TOL: f64 = 1e-9;

/// Which inequality of the minimax definition a complex serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Upper,
    Lower,
    /// The standard set `E`, which is both.
    Both,
}

/// A characteristic complex.
pub trait Complex: Send + Sync {
    fn name(&self) -> String;
    fn side(&self) -> Side;
    /// Dimension of the parameter `q`.
    fn param_dim(&self, n: usize) -> usize;
    /// Dimension of the unit-ball selections `b`.
    fn selection_dim(&self, n: usize) -> usize;
    /// The parameter whose set reproduces `H(τ, y, s)` exactly.
    fn canonical_param(&self, s: &[f64]) -> Vec<f64>;
    /// Bound on `||f||` over the set.
    fn f_bound(&self, h: &History) -> f64;
    /// Maps `b` with `||b|| <= 1` to a point `(f, g)` of the set.
    fn select(&self, h: &History, q: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)>;
    fn contains(&self, h: &History, q: &[f64], f: &[f64], g: f64) -> Result<bool>;
    /// Points whose convex hull approximates the set from inside, `k` directions per dimension.
    fn extreme_points(&self, h: &History, q: &[f64], k: usize) -> Result<Vec<(Vec<f64>, f64)>>;
}

/// Unit-sphere vertices and the edges joining neighbours.
#[derive(Clone, Debug)]
pub struct SphereMesh {
    pub points: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
}

/// Circle polygon with `k` vertices for `dim = 2`; a latitude-longitude
/// net with `k` meridians and `k/2 − 1` rings plus poles for `dim = 3`.
pub fn sphere_mesh(dim: usize, k: usize) -> Result<SphereMesh> {
    if k < 8 {
        return Err(domain!("mesh needs at least 8 directions per dimension, got {k}"));
    }
    match dim {
        1 => Ok(SphereMesh { points: alloc::vec![alloc::vec![-1.0], alloc::vec![1.0]], edges: alloc::vec![(0, 1)] }),
        2 => {
            let points = (0..k)
                .map(|i| {
                    let a = 2.0 * core::f64::consts::PI * i as f64 / k as f64;
                    alloc::vec![libm::cos(a), libm::sin(a)]
                })
                .collect();
            let edges = (0..k).map(|i| (i, (i + 1) % k)).collect();
            Ok(SphereMesh { points, edges })
        }
        3 => {
            let rings = k / 2 - 1;
            let mut points = alloc::vec![alloc::vec![0.0, 0.0, 1.0], alloc::vec![0.0, 0.0, -1.0]];
            let mut edges = Vec::new();
            let at = |r: usize, m: usize| 2 + r * k + m;
            for r in 0..rings {
                let polar = core::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
                for m in 0..k {
                    let az = 2.0 * core::f64::consts::PI * m as f64 / k as f64;
                    points.push(alloc::vec![
                        libm::sin(polar) * libm::cos(az),
                        libm::sin(polar) * libm::sin(az),
                        libm::cos(polar)
                    ]);
                    edges.push((at(r, m), at(r, (m + 1) % k)));
                    if r == 0 {
                        edges.push((0, at(r, m)));
                    } else {
                        edges.push((at(r - 1, m), at(r, m)));
                    }
                    if r + 1 == rings {
                        edges.push((at(r, m), 1));
                    }
                }
            }
            Ok(SphereMesh { points, edges })
        }
        _ => Err(Error::Precondition(format!("meshes are available for dimensions 1 to 3, not {dim}"))),
    }
}

/// `{v : ||v|| <= radius, ⟨normal, v⟩ >= offset}` (upper) or `<= offset` (lower).
#[derive(Clone, Debug)]
pub struct HalfBall {
    pub radius: f64,
    pub normal: Vec<f64>,
    pub offset: f64,
    pub upper: bool,
}

impl HalfBall {
    fn ok(&self, v: &[f64], tol: f64) -> bool {
        let d = vecops::dot(&self.normal, v) - self.offset;
        if self.upper { d >= -tol } else { d <= tol }
    }

    fn check_nonempty(&self) -> Result<()> {
        let reach = self.radius * vecops::norm(&self.normal);
        let empty = if self.upper { self.offset > reach } else { self.offset < -reach };
        if empty {
            return Err(Error::EmptySet(format!(
                "half-ball with offset {} lies outside the ball of reach {reach}; the growth constant is too small",
                self.offset
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        vecops::norm(v) <= self.radius * (1.0 + MEMBERSHIP_TOL) + MEMBERSHIP_TOL
            && self.ok(v, MEMBERSHIP_TOL * (1.0 + libm::fabs(self.offset)))
    }

    /// Scales `b` to the ball; if it violates the constraint, projects onto the
    /// hyperplane and shrinks the in-plane component back into the ball.
    pub fn select(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_nonempty()?;
        let v = vecops::scale(b, self.radius);
        if self.ok(&v, 0.0) {
            return Ok(v);
        }
        let nn = vecops::dot(&self.normal, &self.normal);
        let a = self.offset / libm::sqrt(nn);
        let unit = vecops::scale(&self.normal, 1.0 / libm::sqrt(nn));
        let along = vecops::dot(&unit, &v);
        let mut w = v;
        vecops::axpy(&mut w, -along, &unit);
        let room = libm::sqrt(f64::max(self.radius * self.radius - a * a, 0.0));
        let wn = vecops::norm(&w);
        if wn > room {
            w = vecops::scale(&w, room / wn);
        }
        vecops::axpy(&mut w, a, &unit);
        Ok(w)
    }

    /// Vertices of the inscribed mesh inside the half-space and the crossings
    /// of mesh edges with the bounding hyperplane.
    pub fn mesh(&self, mesh: &SphereMesh) -> Result<Vec<Vec<f64>>> {
        self.check_nonempty()?;
        let scaled: Vec<Vec<f64>> = mesh.points.iter().map(|p| vecops::scale(p, self.radius)).collect();
        let side: Vec<f64> = scaled.iter().map(|p| vecops::dot(&self.normal, p) - self.offset).collect();
        let sign = if self.upper { 1.0 } else { -1.0 };
        let mut out: Vec<Vec<f64>> =
            scaled.iter().zip(&side).filter(|(_, d)| sign * **d >= 0.0).map(|(p, _)| p.clone()).collect();
        for &(a, b) in &mesh.edges {
            let (da, db) = (side[a], side[b]);
            if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
                let w = da / (da - db);
                let mut p = vecops::scale(&scaled[a], 1.0 - w);
                vecops::axpy(&mut p, w, &scaled[b]);
                out.push(p);
            }
        }
        if out.is_empty() {
            // the cap is thinner than the mesh: fall back on its centre
            out.push(self.select(&alloc::vec![0.0; self.normal.len()])?);
        }
        Ok(out)
    }
}

/// The standard set `E(τ, y, s)`: `||f|| <= c(1 + max||y||)`, `g = ⟨s, f⟩ − H(τ, y, s)`.
#[derive(Clone, Debug)]
pub struct StandardComplex {
    pub c: f64,
    pub h: HamiltonianHandle,
}

/// The standard complex for `H` with growth constant `c`.
pub fn standard_e(c: f64, h: HamiltonianHandle) -> Result<StandardComplex> {
    if !(c > 0.0) {
        return Err(Error::Construction(format!("growth constant {c} must be positive")));
    }
    Ok(StandardComplex { c, h })
}

impl Complex for StandardComplex {
    fn name(&self) -> String {
        format!("E[{}]", self.h.name)
    }
    fn side(&self) -> Side {
        Side::Both
    }
    fn param_dim(&self, n: usize) -> usize {
        n
    }
    fn selection_dim(&self, n: usize) -> usize {
        n
    }
    fn canonical_param(&self, s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }
    fn f_bound(&self, h: &History) -> f64 {
        self.c * (1.0 + h.sup_norm())
    }
    fn select(&self, h: &History, q: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
        let f = vecops::scale(b, self.f_bound(h));
        let g = vecops::dot(q, &f) - self.h.eval(h, q);
        Ok((f, g))
    }
    fn contains(&self, h: &History, q: &[f64], f: &[f64], g: f64) -> Result<bool> {
        let r = self.f_bound(h);
        let want = vecops::dot(q, f) - self.h.eval(h, q);
        Ok(vecops::norm(f) <= r * (1.0 + MEMBERSHIP_TOL) && libm::fabs(g - want) <= MEMBERSHIP_TOL * (1.0 + libm::fabs(want)))
    }
    fn extreme_points(&self, h: &History, q: &[f64], k: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        let mesh = sphere_mesh(q.len(), k)?;
        let r = self.f_bound(h);
        let hq = self.h.eval(h, q);
        Ok(mesh
            .points
            .iter()
            .map(|p| {
                let f = vecops::scale(p, r);
                let g = vecops::dot(q, &f) - hq;
                (f, g)
            })
            .collect())
    }
}

/// Half-ball complexes for positively homogeneous Hamiltonians: `g ≡ 0` and
/// `f` in the ball of radius `√2·c(1 + max||y||)` on one side of `⟨s, f⟩ = H`.
#[derive(Clone, Debug)]
pub struct HomogeneousComplex {
    pub c: f64,
    pub h: HamiltonianHandle,
    pub upper: bool,
}

/// `(upper, lower)` homogeneous complexes.
pub fn homogeneous_complexes(c: f64, h: HamiltonianHandle) -> Result<(HomogeneousComplex, HomogeneousComplex)> {
    if !(c > 0.0) {
        return Err(Error::Construction(format!("growth constant {c} must be positive")));
    }
    Ok((
        HomogeneousComplex { c, h: h.clone(), upper: true },
        HomogeneousComplex { c, h, upper: false },
    ))
}

impl HomogeneousComplex {
    fn half_ball(&self, h: &History, q: &[f64]) -> HalfBall {
        HalfBall {
            radius: core::f64::consts::SQRT_2 * self.c * (1.0 + h.sup_norm()),
            normal: q.to_vec(),
            offset: self.h.eval(h, q),
            upper: self.upper,
        }
    }
}

impl Complex for HomogeneousComplex {
    fn name(&self) -> String {
        format!("{}[{}]", if self.upper { "E*" } else { "E_*" }, self.h.name)
    }
    fn side(&self) -> Side {
        if self.upper { Side::Upper } else { Side::Lower }
    }
    fn param_dim(&self, n: usize) -> usize {
        n
    }
    fn selection_dim(&self, n: usize) -> usize {
        n
    }
    fn canonical_param(&self, s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }
    fn f_bound(&self, h: &History) -> f64 {
        core::f64::consts::SQRT_2 * self.c * (1.0 + h.sup_norm())
    }
    fn select(&self, h: &History, q: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok((self.half_ball(h, q).select(b)?, 0.0))
    }
    fn contains(&self, h: &History, q: &[f64], f: &[f64], g: f64) -> Result<bool> {
        Ok(g == 0.0 && self.half_ball(h, q).contains(f))
    }
    fn extreme_points(&self, h: &History, q: &[f64], k: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        let mesh = sphere_mesh(q.len(), k)?;
        Ok(self.half_ball(h, q).mesh(&mesh)?.into_iter().map(|f| (f, 0.0)).collect())
    }
}

/// `H̄(t, x, (s, θ)) = |θ| H(t, x, s/|θ|)`, with the `θ → 0` limit extrapolated.
#[derive(Clone, Debug)]
pub struct LiftedHamiltonian {
    pub h: HamiltonianHandle,
    pub theta_schedule: Vec<f64>,
}

/// Builds the lifted Hamiltonian; the schedule defaults to `{1e-1, 1e-2, 1e-3}`.
pub fn lift_hamiltonian(h: HamiltonianHandle, theta_schedule: Option<Vec<f64>>) -> Result<LiftedHamiltonian> {
    let theta_schedule = theta_schedule.unwrap_or_else(|| alloc::vec![1e-1, 1e-2, 1e-3]);
    if theta_schedule.len() < 2
        || theta_schedule.iter().any(|t| !(*t > 0.0))
        || theta_schedule.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::Construction("theta schedule must be positive, decreasing, with two or more entries".into()));
    }
    Ok(LiftedHamiltonian { h, theta_schedule })
}

impl LiftedHamiltonian {
    /// `H⁰(t, x, s)`, Richardson-extrapolated from the two smallest `θ`.
    pub fn h0(&self, hist: &History, s: &[f64]) -> Result<f64> {
        let vals: Vec<f64> = self
            .theta_schedule
            .iter()
            .map(|&th| th * self.h.eval(hist, &vecops::scale(s, 1.0 / th)))
            .collect();
        let scale = vals.iter().fold(1.0, |m, v| f64::max(m, libm::fabs(*v)));
        for w in vals.windows(3) {
            if libm::fabs(w[2] - w[1]) > libm::fabs(w[1] - w[0]) + 1e-4 * scale {
                return Err(Error::NonConvergent(format!(
                    "θ·H(s/θ) does not settle as θ decreases: {vals:?}"
                )));
            }
        }
        let m = vals.len();
        if libm::fabs(vals[m - 1] - vals[m - 2]) > 1e-4 * scale && m < 3 {
            return Err(Error::NonConvergent(format!("θ·H(s/θ) differs by more than 1e-4: {vals:?}")));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergent("non-finite θ·H(s/θ)".into()));
        }
        Ok(richardson(&self.theta_schedule, &vals, 1))
    }

    /// `H̄` at `s̄ = (s, θ)`, given as one vector of length `n + 1`.
    pub fn eval(&self, hist: &History, sbar: &[f64]) -> Result<f64> {
        let n = sbar.len() - 1;
        let (s, theta) = (&sbar[..n], sbar[n]);
        if theta == 0.0 {
            self.h0(hist, s)
        } else {
            let a = libm::fabs(theta);
            Ok(a * self.h.eval(hist, &vecops::scale(s, 1.0 / a)))
        }
    }

    /// The lift as a Hamiltonian in `n + 1` impulse variables; `θ = 0` errors map to NaN.
    pub fn as_handle(&self) -> HamiltonianHandle {
        let me = self.clone();
        let c = self.h.c;
        HamiltonianHandle::new(format!("lift[{}]", self.h.name), c, move |h: &History, sbar: &[f64]| {
            me.eval(h, sbar).unwrap_or(f64::NAN)
        })
    }
}

/// Half-ball complexes over `(f, g)` for the lifted Hamiltonian.
#[derive(Clone, Debug)]
pub struct LiftedComplex {
    pub c: f64,
    pub lifted: LiftedHamiltonian,
    pub upper: bool,
}

/// `(upper, lower)` lifted complexes.
pub fn lifted_complexes(c: f64, lifted: LiftedHamiltonian) -> Result<(LiftedComplex, LiftedComplex)> {
    if !(c > 0.0) {
        return Err(Error::Construction(format!("growth constant {c} must be positive")));
    }
    Ok((
        LiftedComplex { c, lifted: lifted.clone(), upper: true },
        LiftedComplex { c, lifted, upper: false },
    ))
}

impl LiftedComplex {
    fn half_ball(&self, h: &History, q: &[f64]) -> Result<HalfBall> {
        Ok(HalfBall {
            radius: core::f64::consts::SQRT_2 * self.c * (1.0 + h.sup_norm()),
            normal: q.to_vec(),
            offset: self.lifted.eval(h, q)?,
            upper: self.upper,
        })
    }
}

fn split(v: Vec<f64>) -> (Vec<f64>, f64) {
    let mut f = v;
    let g = f.pop().expect("lifted vectors have n + 1 entries");
    (f, g)
}

impl Complex for LiftedComplex {
    fn name(&self) -> String {
        format!("{}[{}]", if self.upper { "Ē*" } else { "Ē_*" }, self.lifted.h.name)
    }
    fn side(&self) -> Side {
        if self.upper { Side::Upper } else { Side::Lower }
    }
    fn param_dim(&self, n: usize) -> usize {
        n + 1
    }
    fn selection_dim(&self, n: usize) -> usize {
        n + 1
    }
    /// `(s, −1)`: the constraint becomes `⟨s, f⟩ − g ≷ H(s)`.
    fn canonical_param(&self, s: &[f64]) -> Vec<f64> {
        let mut q = s.to_vec();
        q.push(-1.0);
        q
    }
    fn f_bound(&self, h: &History) -> f64 {
        core::f64::consts::SQRT_2 * self.c * (1.0 + h.sup_norm())
    }
    fn select(&self, h: &History, q: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok(split(self.half_ball(h, q)?.select(b)?))
    }
    fn contains(&self, h: &History, q: &[f64], f: &[f64], g: f64) -> Result<bool> {
        let mut v = f.to_vec();
        v.push(g);
        Ok(self.half_ball(h, q)?.contains(&v))
    }
    fn extreme_points(&self, h: &History, q: &[f64], k: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        let mesh = sphere_mesh(q.len(), k)?;
        Ok(self.half_ball(h, q)?.mesh(&mesh)?.into_iter().map(split).collect())
    }
}

/// A characteristic `(y, z)`: `y` extends the history, `z` vanishes on `[-h, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicPair {
    pub t_index: usize,
    pub y: PathGrid,
    /// Scalar path on the same grid.
    pub z: PathGrid,
}

impl CharacteristicPair {
    pub fn z_at(&self, i: usize) -> f64 {
        self.z.node(i)[0]
    }
}

pub type SelectorFn = Arc<dyn Fn(&History, usize) -> Vec<f64> + Send + Sync>;
pub type DirectFn = Arc<dyn Fn(&History, usize) -> (Vec<f64>, f64) + Send + Sync>;

/// How a selection is chosen on each cell of `[t, T]`.
#[derive(Clone)]
pub enum SelectionPolicy {
    /// The same unit-ball point on every cell.
    Fixed(Vec<f64>),
    /// A fresh uniform unit-ball point per cell, from the seed.
    RandomPerCell,
    /// Unit-ball points per cell.
    PerCell(Vec<Vec<f64>>),
    /// Unit-ball point from the current history and cell offset.
    Callback(SelectorFn),
    /// `(f, g)` directly; checked for membership.
    Direct(DirectFn),
}

impl core::fmt::Debug for SelectionPolicy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SelectionPolicy::Fixed(b) => f.debug_tuple("Fixed").field(b).finish(),
            SelectionPolicy::RandomPerCell => f.write_str("RandomPerCell"),
            SelectionPolicy::PerCell(v) => f.debug_tuple("PerCell").field(&v.len()).finish(),
            SelectionPolicy::Callback(_) => f.write_str("Callback"),
            SelectionPolicy::Direct(_) => f.write_str("Direct"),
        }
    }
}

/// Euler solution of `(ẏ, ż) ∈ E(τ, y, q)` from `point` with `z(t) = 0`.
pub fn integrate_characteristic(
    complex: &dyn Complex,
    point: &HistoryPoint,
    q: &[f64],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<CharacteristicPair> {
    integrate_characteristic_until(complex, point, q, policy, seed, point.spec().last_index())
}

/// As [`integrate_characteristic`], stopping at node `end`; later nodes stay frozen.
pub fn integrate_characteristic_until(
    complex: &dyn Complex,
    point: &HistoryPoint,
    q: &[f64],
    policy: &SelectionPolicy,
    seed: u64,
    end: usize,
) -> Result<CharacteristicPair> {
    let spec = *point.spec();
    if point.is_terminal() {
        return Err(domain!("characteristics start at t < T"));
    }
    if end < point.index() || end > spec.last_index() {
        return Err(domain!("end node {end} outside [t, T]"));
    }
    let n = spec.n;
    if q.len() != complex.param_dim(n) {
        return Err(domain!("parameter has dimension {}, expected {}", q.len(), complex.param_dim(n)));
    }
    let sd = complex.selection_dim(n);
    let mut y = stop_path(point.path(), point.t())?;
    let zspec = GridSpec { n: 1, ..spec };
    let mut z = PathGrid::zeros(zspec);
    let mut rng = sampling::rng(seed);
    for i in point.index()..end {
        let cell = i - point.index();
        let h = History::new(&y, i);
        let (f, g) = match policy {
            SelectionPolicy::Direct(sel) => {
                let (f, g) = sel(&h, cell);
                if f.len() != n || !complex.contains(&h, q, &f, g)? {
                    return Err(Error::SelectionOutsideSet { cell: i, message: format!("({f:?}, {g}) not in {}", complex.name()) });
                }
                (f, g)
            }
            _ => {
                let b = match policy {
                    SelectionPolicy::Fixed(b) => b.clone(),
                    SelectionPolicy::RandomPerCell => sampling::in_ball(&mut rng, sd, 1.0),
                    SelectionPolicy::PerCell(v) => v.get(cell).cloned().ok_or_else(|| domain!("no selection for cell {cell}"))?,
                    SelectionPolicy::Callback(cb) => cb(&h, cell),
                    SelectionPolicy::Direct(_) => unreachable!(),
                };
                if b.len() != sd || !(vecops::norm(&b) <= 1.0 + 1e-12) {
                    return Err(Error::SelectionOutsideSet { cell: i, message: format!("selection {b:?} is not in the closed unit ball of R^{sd}") });
                }
                complex.select(&h, q, &b)?
            }
        };
        if f.iter().any(|v| !v.is_finite()) || !g.is_finite() {
            return Err(Error::Evaluation { cell: i, message: "selection is not finite".into() });
        }
        let next = vecops::add(y.node(i), &vecops::scale(&f, spec.step));
        y.node_mut(i + 1).copy_from_slice(&next);
        let zn = z.node(i)[0] + spec.step * g;
        z.node_mut(i + 1)[0] = zn;
    }
    // keep both paths frozen after the last integrated node
    let y = stop_path(&y, spec.time(end))?;
    let z = stop_path(&z, spec.time(end))?;
    Ok(CharacteristicPair { t_index: point.index(), y, z })
}

/// Per-trial outcome of [`verify_c4`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C4Trial {
    pub t: f64,
    pub s: Vec<f64>,
    pub h: f64,
    /// `sup_q min_{E*(q)} (⟨s,f⟩ − g)` over the sampled parameters and mesh.
    pub upper: Option<f64>,
    /// `inf_p max_{E_*(p)} (⟨s,f⟩ − g)`.
    pub lower: Option<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C4Report {
    pub mesh: usize,
    pub params_per_trial: usize,
    pub trials: Vec<C4Trial>,
    pub max_residual: f64,
}

/// Settings for [`verify_c4`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C4Config {
    pub trials: usize,
    /// Directions per dimension of the ball mesh.
    pub mesh: usize,
    /// Random parameters tried besides the canonical one.
    pub extra_params: usize,
    pub seed: u64,
}

fn support_value(complex: &dyn Complex, h: &History, q: &[f64], s: &[f64], k: usize, minimize: bool) -> Result<f64> {
    let pts = complex.extreme_points(h, q, k)?;
    let vals = pts.iter().map(|(f, g)| vecops::dot(s, f) - g);
    Ok(if minimize { vals.fold(f64::INFINITY, f64::min) } else { vals.fold(f64::NEG_INFINITY, f64::max) })
}

/// Brute-force check of the sup-min / inf-max representation of `H`.
///
/// Parameters are the canonical one for `s`, random perturbations of it, and
/// random independent draws; parameters whose set is empty are skipped.
/// Either complex may be absent. A [`Side::Both`] complex is used for both
/// representations when given as `upper`.
pub fn verify_c4(
    upper: Option<&dyn Complex>,
    lower: Option<&dyn Complex>,
    h: &HamiltonianHandle,
    spec: GridSpec,
    cfg: &C4Config,
) -> Result<C4Report> {
    if upper.is_none() && lower.is_none() {
        return Err(Error::Precondition("no complex to check".into()));
    }
    let lower = lower.or(upper.filter(|c| c.side() == Side::Both));
    let n = spec.n;
    let mut rng = sampling::rng(cfg.seed);
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut max_residual: f64 = 0.0;
    for _ in 0..cfg.trials {
        let point = sampling::random_point(spec, &mut rng, 1.0, 0.0, spec.horizon);
        let hist = point.history();
        let s = vecops::scale(&sampling::gaussian(&mut rng, n), 1.5);
        let hs = h.eval(&hist, &s);
        let eval_side = |cx: &dyn Complex, minimize: bool, rng: &mut sampling::SeededRng| -> Result<f64> {
            let canon = cx.canonical_param(&s);
            let d = canon.len();
            let scale = vecops::norm(&canon);
            let mut params = alloc::vec![canon.clone()];
            for k in 0..cfg.extra_params {
                let noise = sampling::gaussian(rng, d);
                let amp = if k % 2 == 0 { 0.05 * scale } else { scale };
                params.push(if k % 2 == 0 { vecops::add(&canon, &vecops::scale(&noise, amp)) } else { vecops::scale(&noise, amp) });
            }
            let mut best = if minimize { f64::NEG_INFINITY } else { f64::INFINITY };
            for q in &params {
                match support_value(cx, &hist, q, &s, cfg.mesh, minimize) {
                    Ok(v) => best = if minimize { f64::max(best, v) } else { f64::min(best, v) },
                    Err(Error::EmptySet(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Ok(best)
        };
        let up = match upper {
            Some(cx) => Some(eval_side(cx, true, &mut rng)?),
            None => None,
        };
        let lo = match lower {
            Some(cx) => Some(eval_side(cx, false, &mut rng)?),
            None => None,
        };
        let residual = [up, lo].iter().flatten().fold(0.0, |m: f64, v| f64::max(m, libm::fabs(v - hs)));
        max_residual = f64::max(max_residual, residual);
        trials.push(C4Trial { t: point.t(), s, h: hs, upper: up, lower: lo, residual });
    }
    Ok(C4Report { mesh: cfg.mesh, params_per_trial: cfg.extra_params + 1, trials, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::DelayKind;
    use crate::path::in_y;
    use alloc::vec;
    use proptest::prelude::*;

    fn spec2() -> GridSpec {
        GridSpec::new(2, 1.0, 1.0, 0.05).unwrap()
    }

    fn lin_h(spec: &GridSpec) -> HamiltonianHandle {
        HamiltonianHandle::delayed_linear(DelayKind::Constant { lag: 1.0 }, spec).unwrap()
    }

    fn point(spec: GridSpec, seed: u64) -> HistoryPoint {
        sampling::random_point(spec, &mut sampling::rng(seed), 1.0, 0.0, 0.5)
    }

    #[test]
    fn standard_selection_examples() {
        let spec = spec2();
        let e = standard_e(1.0, lin_h(&spec)).unwrap();
        let p = point(spec, 1);
        let h = p.history();
        let s = vec![0.4, -1.0];
        let (f, g) = e.select(&h, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
        assert_eq!(g, -e.h.eval(&h, &s));
        let zero = vec![0.0, 0.0];
        let (_, g) = e.select(&h, &zero, &[0.6, 0.0]).unwrap();
        assert_eq!(g, -e.h.eval(&h, &zero));
    }

    #[test]
    fn constant_hamiltonian_gives_linear_characteristic() {
        let spec = spec2();
        let h0 = 0.7;
        let e = standard_e(1.0, HamiltonianHandle::new("const", 1.0, move |_: &History, _: &[f64]| h0)).unwrap();
        let p = point(spec, 2);
        let s = vec![1.0, 2.0];
        let b = vec![0.3, -0.2];
        let pair = integrate_characteristic(&e, &p, &s, &SelectionPolicy::Fixed(b.clone()), 0).unwrap();
        // f0 = R·b with R = c(1 + max||y||) varying along y, so check per cell
        for i in p.index()..spec.last_index() {
            let f = vecops::scale(&vecops::sub(pair.y.node(i + 1), pair.y.node(i)), 1.0 / spec.step);
            let dz = (pair.z_at(i + 1) - pair.z_at(i)) / spec.step;
            assert!((dz - (vecops::dot(&s, &f) - h0)).abs() < 1e-10);
        }
        // with f0 = 0 the closed form is z(τ) = −h0 (τ − t)
        let pair = integrate_characteristic(&e, &p, &s, &SelectionPolicy::Fixed(vec![0.0, 0.0]), 0).unwrap();
        let end = spec.last_index();
        assert!((pair.z_at(end) + h0 * (1.0 - p.t())).abs() < 1e-10);
    }

    #[test]
    fn zero_policy_with_zero_hamiltonian_freezes() {
        let spec = spec2();
        let e = standard_e(1.0, HamiltonianHandle::new("zero", 1.0, |_: &History, _: &[f64]| 0.0)).unwrap();
        let p = point(spec, 3);
        let pair = integrate_characteristic(&e, &p, &[1.0, 1.0], &SelectionPolicy::Fixed(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(pair.y, stop_path(p.path(), p.t()).unwrap());
        assert!(pair.z.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn policy_outside_set_is_rejected() {
        let spec = spec2();
        let e = standard_e(1.0, lin_h(&spec)).unwrap();
        let p = point(spec, 4);
        let err = integrate_characteristic(&e, &p, &[1.0, 0.0], &SelectionPolicy::Fixed(vec![2.0, 0.0]), 0).unwrap_err();
        assert!(matches!(err, Error::SelectionOutsideSet { cell, .. } if cell == p.index()));
        let direct = SelectionPolicy::Direct(Arc::new(|_: &History, _: usize| (vec![0.0, 0.0], 5.0)));
        assert!(matches!(integrate_characteristic(&e, &p, &[1.0, 0.0], &direct, 0), Err(Error::SelectionOutsideSet { .. })));
    }

    #[test]
    fn homogeneous_membership_examples() {
        let spec = spec2();
        let c = 1.0;
        let h = HamiltonianHandle::new("-|s|c(1+M)", c, move |h: &History, s: &[f64]| -vecops::norm(s) * c * (1.0 + h.sup_norm()));
        let (up, lo) = homogeneous_complexes(c, h.clone()).unwrap();
        let p = point(spec, 5);
        let hist = p.history();
        let s = vec![0.6, 0.8];
        let r = c * (1.0 + hist.sup_norm());
        let f = vecops::scale(&s, -r);
        assert!(lo.contains(&hist, &s, &f, 0.0).unwrap());
        // s = 0 and H(·, ·, 0) = 0: both sets are the whole ball
        let zero = vec![0.0, 0.0];
        let edge = vec![up.f_bound(&hist), 0.0];
        assert!(up.contains(&hist, &zero, &edge, 0.0).unwrap());
        assert!(lo.contains(&hist, &zero, &edge, 0.0).unwrap());
    }

    #[test]
    fn empty_half_ball_is_reported() {
        let spec = spec2();
        let big = HamiltonianHandle::new("big", 1.0, |_: &History, s: &[f64]| 100.0 * vecops::norm(s));
        let (up, _) = homogeneous_complexes(1.0, big).unwrap();
        let p = point(spec, 6);
        assert!(matches!(up.select(&p.history(), &[1.0, 0.0], &[0.0, 0.0]), Err(Error::EmptySet(_))));
    }

    #[test]
    fn standard_c4_is_exact() {
        let spec = spec2();
        let h = lin_h(&spec);
        let e = standard_e(1.0, h.clone()).unwrap();
        let rep = verify_c4(Some(&e), None, &h, spec, &C4Config { trials: 10, mesh: 16, extra_params: 6, seed: 2 }).unwrap();
        assert!(rep.max_residual <= 1e-10, "{rep:?}");
    }

    #[test]
    fn homogeneous_c4_refines() {
        let spec = spec2();
        let h = lin_h(&spec);
        let (up, lo) = homogeneous_complexes(1.0, h.clone()).unwrap();
        let mut prev = f64::INFINITY;
        for k in [8, 16, 32, 64] {
            let rep = verify_c4(Some(&up), Some(&lo), &h, spec, &C4Config { trials: 10, mesh: k, extra_params: 8, seed: 3 }).unwrap();
            assert!(rep.max_residual <= prev + 1e-12);
            prev = rep.max_residual;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn zero_impulse_c4() {
        let spec = spec2();
        let h = lin_h(&spec);
        let (up, lo) = homogeneous_complexes(1.0, h.clone()).unwrap();
        let p = point(spec, 7);
        let hist = p.history();
        let z = vec![0.0, 0.0];
        let v = support_value(&up, &hist, &z, &z, 8, true).unwrap();
        let w = support_value(&lo, &hist, &z, &z, 8, false).unwrap();
        assert_eq!((v, w), (0.0, 0.0));
    }

    #[test]
    fn lift_examples() {
        let spec = GridSpec::new(1, 1.0, 1.0, 0.05).unwrap();
        let p = point(spec, 8);
        let hist = p.history();
        let lin = lin_h(&spec);
        let l = lift_hamiltonian(lin.clone(), None).unwrap();
        for th in [0.0, 0.3, -2.0] {
            let v = l.eval(&hist, &[1.7, th]).unwrap();
            assert!((v - lin.eval(&hist, &[1.7])).abs() < 1e-12);
        }
        let (b, g0) = (0.8, 0.4);
        let aff = HamiltonianHandle::new("sb-g0", 1.0, move |_: &History, s: &[f64]| s[0] * b - g0);
        let l = lift_hamiltonian(aff, None).unwrap();
        assert!((l.eval(&hist, &[2.0, 0.5]).unwrap() - (2.0 * b - 0.5 * g0)).abs() < 1e-12);
        assert!((l.eval(&hist, &[2.0, 0.0]).unwrap() - 2.0 * b).abs() < 1e-9);
        let bounded = HamiltonianHandle::new("sin", 1.0, |h: &History, s: &[f64]| libm::sin(s[0] * h.current()[0]));
        let l = lift_hamiltonian(bounded, None).unwrap();
        assert!(l.eval(&hist, &[1.3, 0.0]).unwrap().abs() < 3e-3);
        let quad = HamiltonianHandle::new("s^2", 1.0, |_: &History, s: &[f64]| s[0] * s[0]);
        let l = lift_hamiltonian(quad, None).unwrap();
        assert!(matches!(l.eval(&hist, &[1.0, 0.0]), Err(Error::NonConvergent(_))));
        assert!(lift_hamiltonian(lin, Some(vec![0.1, 0.2])).is_err());
    }

    #[test]
    fn lifted_c4_recovers_h() {
        let spec = GridSpec::new(1, 1.0, 1.0, 0.05).unwrap();
        let aff = HamiltonianHandle::new("s/2-0.3", 1.0, |_: &History, s: &[f64]| 0.5 * s[0] - 0.3);
        let l = lift_hamiltonian(aff.clone(), None).unwrap();
        let (up, lo) = lifted_complexes(1.0, l).unwrap();
        let rep = verify_c4(Some(&up), Some(&lo), &aff, spec, &C4Config { trials: 5, mesh: 64, extra_params: 4, seed: 1 }).unwrap();
        assert!(rep.max_residual < 1e-3, "{rep:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn characteristics_satisfy_invariants(seed in 0u64..10_000) {
            let spec = spec2();
            let h = lin_h(&spec);
            let e = standard_e(1.0, h.clone()).unwrap();
            let p = point(spec, seed);
            let s = sampling::gaussian(&mut sampling::rng(seed + 1), 2);
            let pair = integrate_characteristic(&e, &p, &s, &SelectionPolicy::RandomPerCell, seed).unwrap();
            for i in 0..=p.index() {
                prop_assert_eq!(pair.z_at(i), 0.0);
                prop_assert_eq!(pair.y.node(i), p.path().node(i));
            }
            for i in p.index()..spec.last_index() {
                let f = vecops::scale(&vecops::sub(pair.y.node(i + 1), pair.y.node(i)), 1.0 / spec.step);
                let dz = (pair.z_at(i + 1) - pair.z_at(i)) / spec.step;
                let want = vecops::dot(&s, &f) - h.eval(&History::new(&pair.y, i), &s);
                prop_assert!((dz - want).abs() < 1e-10);
            }
            prop_assert!(in_y(&p, &pair.y, 1.0).unwrap());
        }

        #[test]
        fn homogeneous_selections_stay_in_set(seed in 0u64..10_000) {
            let spec = spec2();
            let (up, lo) = homogeneous_complexes(1.0, lin_h(&spec)).unwrap();
            let p = point(spec, seed);
            let mut r = sampling::rng(seed);
            let s = sampling::gaussian(&mut r, 2);
            for cx in [&up, &lo] {
                let pair = integrate_characteristic(cx, &p, &s, &SelectionPolicy::RandomPerCell, seed).unwrap();
                for i in p.index()..spec.last_index() {
                    let f = vecops::scale(&vecops::sub(pair.y.node(i + 1), pair.y.node(i)), 1.0 / spec.step);
                    prop_assert!(cx.contains(&History::new(&pair.y, i), &s, &f, 0.0).unwrap());
                }
                prop_assert!(in_y(&p, &pair.y, core::f64::consts::SQRT_2).unwrap());
            }
        }

        #[test]
        fn lifted_hamiltonian_is_homogeneous(seed in 0u64..10_000, th in -2.0f64..2.0) {
            let spec = GridSpec::new(1, 1.0, 1.0, 0.05).unwrap();
            let p = point(spec, seed);
            let hist = p.history();
            let base = HamiltonianHandle::new("bellman-like", 1.0, |h: &History, s: &[f64]| f64::min(s[0] * h.current()[0] - 0.2, -s[0] + 0.1));
            let l = lift_hamiltonian(base, None).unwrap();
            let sbar = [sampling::gaussian(&mut sampling::rng(seed), 1)[0], th];
            let v = l.eval(&hist, &sbar).unwrap();
            for a in [0.5, 2.0] {
                let w = l.eval(&hist, &[a * sbar[0], a * sbar[1]]).unwrap();
                prop_assert!((w - a * v).abs() <= 1e-8 * (1.0 + v.abs()));
            }
        }
    }
}
