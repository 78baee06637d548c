//! Sampled paths on `[-h, T]`, positions `(t, x(·))`, and the metrics on them.
//!
//! A [`PathGrid`] stores node values on a uniform grid whose step divides both
//! the delay horizon `h` and the terminal time `T`, so every lag that is a
//! multiple of the step lands on a node. Between nodes a path is piecewise
//! linear. All norms over time are maxima over nodes.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::vecops;

const GRID_TOL: f64 = 1e-7;

/// Grid parameters shared by every path of one problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// State dimension.
    pub n: usize,
    /// Delay horizon.
    pub h: f64,
    /// Terminal time.
    pub horizon: f64,
    /// Grid spacing.
    pub step: f64,
}

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = libm::round(r);
    if k >= 0.0 && libm::fabs(r - k) <= GRID_TOL * f64::max(1.0, k) {
        Some(k as usize)
    } else {
        None
    }
}

impl GridSpec {
    pub fn new(n: usize, h: f64, horizon: f64, step: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Construction("state dimension must be positive".into()));
        }
        if !(h > 0.0 && horizon > 0.0 && step > 0.0) || !(h + horizon + step).is_finite() {
            return Err(Error::Construction(format!(
                "h, T and step must be positive and finite (h={h}, T={horizon}, step={step})"
            )));
        }
        if integer_ratio(h, step).is_none() || integer_ratio(horizon, step).is_none() {
            return Err(Error::Construction(format!(
                "step {step} must divide h={h} and T={horizon}"
            )));
        }
        Ok(Self { n, h, horizon, step })
    }

    /// Number of cells in `[-h, 0]`.
    pub fn lag_nodes(&self) -> usize {
        integer_ratio(self.h, self.step).expect("validated at construction")
    }

    /// Number of cells in `[0, T]`.
    pub fn horizon_nodes(&self) -> usize {
        integer_ratio(self.horizon, self.step).expect("validated at construction")
    }

    /// Total number of nodes, `(T + h)/step + 1`.
    pub fn node_count(&self) -> usize {
        self.lag_nodes() + self.horizon_nodes() + 1
    }

    pub fn zero_index(&self) -> usize {
        self.lag_nodes()
    }

    pub fn last_index(&self) -> usize {
        self.node_count() - 1
    }

    /// Time of node `i`.
    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.lag_nodes() as f64) * self.step
    }

    /// Node index of a grid time in `[-h, T]`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.step + self.lag_nodes() as f64;
        let k = libm::round(r);
        if !r.is_finite() || libm::fabs(r - k) > GRID_TOL * f64::max(1.0, libm::fabs(k)) {
            return Err(domain!("time {t} is not a grid node (step {})", self.step));
        }
        if k < 0.0 || k as usize > self.last_index() {
            return Err(domain!("time {t} outside [-{}, {}]", self.h, self.horizon));
        }
        Ok(k as usize)
    }

    /// Nearest node to an arbitrary time, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let r = libm::round(t / self.step + self.lag_nodes() as f64);
        if r <= 0.0 {
            0
        } else {
            usize::min(r as usize, self.last_index())
        }
    }

    /// Node index of a position time in `[0, T]`.
    pub fn position_index(&self, t: f64) -> Result<usize> {
        let i = self.index_of(t)?;
        if i < self.zero_index() {
            return Err(domain!("position time {t} must lie in [0, {}]", self.horizon));
        }
        Ok(i)
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// A continuous path `[-h, T] -> R^n` sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    spec: GridSpec,
    samples: Vec<f64>,
}

impl PathGrid {
    /// Builds a path from row-major node samples (`node_count * n` values).
    pub fn from_samples(spec: GridSpec, samples: Vec<f64>) -> Result<Self> {
        let want = spec.node_count() * spec.n;
        if samples.len() != want {
            return Err(Error::Construction(format!(
                "expected {want} sample values, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Construction(format!("non-finite sample at flat index {i}")));
        }
        Ok(Self { spec, samples })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, samples: alloc::vec![0.0; spec.node_count() * spec.n] }
    }

    pub fn constant(spec: GridSpec, value: &[f64]) -> Self {
        assert_eq!(value.len(), spec.n, "constant value has wrong dimension");
        let mut samples = Vec::with_capacity(spec.node_count() * spec.n);
        for _ in 0..spec.node_count() {
            samples.extend_from_slice(value);
        }
        Self { spec, samples }
    }

    /// Samples `f(t)` at every node.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut samples = Vec::with_capacity(spec.node_count() * spec.n);
        for i in 0..spec.node_count() {
            let v = f(spec.time(i));
            if v.len() != spec.n {
                return Err(Error::Construction(format!(
                    "sample at node {i} has dimension {}, expected {}",
                    v.len(),
                    spec.n
                )));
            }
            samples.extend_from_slice(&v);
        }
        Self::from_samples(spec, samples)
    }

    /// Scalar path (`n = 1`) from a function of time.
    pub fn from_scalar_fn(spec: GridSpec, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::from_fn(spec, |t| alloc::vec![f(t)])
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.spec.n
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        let n = self.spec.n;
        &self.samples[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.spec.n;
        &mut self.samples[i * n..(i + 1) * n]
    }

    /// Value at an arbitrary time by linear interpolation; exact at nodes.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let s = &self.spec;
        if !(t >= -s.h - GRID_TOL * s.step && t <= s.horizon + GRID_TOL * s.step) {
            return Err(domain!("time {t} outside [-{}, {}]", s.h, s.horizon));
        }
        if let Ok(i) = s.index_of(t) {
            return Ok(self.node(i).to_vec());
        }
        let r = t / s.step + s.lag_nodes() as f64;
        let i = usize::min(libm::floor(r) as usize, s.last_index() - 1);
        let w = r - i as f64;
        Ok(self
            .node(i)
            .iter()
            .zip(self.node(i + 1))
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect())
    }

    /// `max_{nodes i <= last} |x(t_i)|`.
    pub fn max_norm_through(&self, last: usize) -> f64 {
        (0..=last).fold(0.0, |m, i| f64::max(m, vecops::norm(self.node(i))))
    }

    /// Pointwise difference `self - other`.
    pub fn sub(&self, other: &PathGrid) -> Result<PathGrid> {
        self.spec.check_same(&other.spec)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect();
        Ok(Self { spec: self.spec, samples })
    }

    /// Pointwise sum `self + other`.
    pub fn add(&self, other: &PathGrid) -> Result<PathGrid> {
        self.spec.check_same(&other.spec)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Ok(Self { spec: self.spec, samples })
    }

    /// Replaces every node after `index` by the value at `index`.
    pub(crate) fn freeze_after(&mut self, index: usize) {
        let n = self.spec.n;
        let (head, tail) = self.samples.split_at_mut((index + 1) * n);
        let frozen = &head[index * n..];
        for chunk in tail.chunks_exact_mut(n) {
            chunk.copy_from_slice(frozen);
        }
    }
}

/// Read-only view of a path up to a current node: the history `x_t(·)`.
///
/// Functionals, dynamics and Hamiltonians receive a `History`. Reads through
/// [`History::at`] are restricted to nodes `<= index`; [`History::full_path`]
/// exists for deliberately anticipative test functionals.
#[derive(Clone, Copy, Debug)]
pub struct History<'a> {
    path: &'a PathGrid,
    index: usize,
}

impl<'a> History<'a> {
    pub fn new(path: &'a PathGrid, index: usize) -> Self {
        assert!(index <= path.spec.last_index(), "history index out of range");
        Self { path, index }
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.index
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.path.spec.time(self.index)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.path.spec.n
    }

    #[inline]
    pub fn spec(&self) -> &'a GridSpec {
        &self.path.spec
    }

    /// `x(t)`.
    #[inline]
    pub fn current(&self) -> &'a [f64] {
        self.path.node(self.index)
    }

    /// Node `i <= index`.
    #[inline]
    pub fn at(&self, i: usize) -> &'a [f64] {
        assert!(i <= self.index, "anticipative read of node {i} at history index {}", self.index);
        self.path.node(i)
    }

    /// `x(t - lag)` with the lag rounded to the grid and clamped to `[-h, t]`.
    pub fn delayed(&self, lag: f64) -> &'a [f64] {
        let k = libm::round(lag / self.path.spec.step);
        let k = if k <= 0.0 { 0 } else { usize::min(k as usize, self.index) };
        self.path.node(self.index - k)
    }

    /// `x(tau)` at the node nearest to `tau`, clamped to `[-h, t]`.
    pub fn lookup(&self, tau: f64) -> &'a [f64] {
        let i = usize::min(self.path.spec.nearest_index(tau), self.index);
        self.path.node(i)
    }

    /// `||x(·)||_{[-h, t]}`.
    pub fn sup_norm(&self) -> f64 {
        self.path.max_norm_through(self.index)
    }

    /// Trapezoidal `∫_{-h}^{t} w(tau) x(tau) dtau` for a scalar weight.
    pub fn integral_weighted(&self, mut weight: impl FnMut(f64) -> f64) -> Vec<f64> {
        let spec = self.path.spec;
        let mut acc = alloc::vec![0.0; spec.n];
        for i in 0..self.index {
            let (a, b) = (spec.time(i), spec.time(i + 1));
            let (wa, wb) = (weight(a), weight(b));
            for (k, v) in acc.iter_mut().enumerate() {
                *v += 0.5 * spec.step * (wa * self.path.node(i)[k] + wb * self.path.node(i + 1)[k]);
            }
        }
        acc
    }

    pub fn full_path(&self) -> &'a PathGrid {
        self.path
    }
}

/// A position `(t, x(·))` with `t` a grid node in `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    index: usize,
    path: PathGrid,
}

impl HistoryPoint {
    pub fn new(t: f64, path: PathGrid) -> Result<Self> {
        let index = path.spec.position_index(t)?;
        Ok(Self { index, path })
    }

    pub fn at_index(index: usize, path: PathGrid) -> Result<Self> {
        let spec = path.spec;
        if index < spec.zero_index() || index > spec.last_index() {
            return Err(domain!("node {index} is not a position in [0, T]"));
        }
        Ok(Self { index, path })
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.path.spec.time(self.index)
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.index
    }

    #[inline]
    pub fn path(&self) -> &PathGrid {
        &self.path
    }

    pub fn into_path(self) -> PathGrid {
        self.path
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.path.spec
    }

    #[inline]
    pub fn history(&self) -> History<'_> {
        History::new(&self.path, self.index)
    }

    /// True when `t = T`.
    pub fn is_terminal(&self) -> bool {
        self.index == self.path.spec.last_index()
    }
}

/// `||x(·)||_{[-h, t]}`, the maximum of node norms up to `t`.
pub fn uniform_norm(path: &PathGrid, t: f64) -> Result<f64> {
    let i = path.spec.index_of(t)?;
    Ok(path.max_norm_through(i))
}

/// Product metric `|t_a - t_b| + ||x_a - x_b||_{[-h, T]}`.
pub fn dist(a: &HistoryPoint, b: &HistoryPoint) -> Result<f64> {
    a.spec().check_same(b.spec())?;
    let spec = a.spec();
    let sup = (0..spec.node_count())
        .fold(0.0, |m, i| f64::max(m, vecops::dist(a.path.node(i), b.path.node(i))));
    Ok(libm::fabs(a.t() - b.t()) + sup)
}

/// The stopped path `x(· ∧ t)`.
pub fn stop_path(path: &PathGrid, t: f64) -> Result<PathGrid> {
    let i = path.spec.index_of(t)?;
    let mut out = path.clone();
    out.freeze_after(i);
    Ok(out)
}

pub(crate) fn stop_at(path: &PathGrid, index: usize) -> PathGrid {
    let mut out = path.clone();
    out.freeze_after(index);
    out
}

/// Pseudometric `|t_a - t_b| + ||x_a(· ∧ t_a) - x_b(· ∧ t_b)||_{[-h, T]}`.
pub fn rho(a: &HistoryPoint, b: &HistoryPoint) -> Result<f64> {
    a.spec().check_same(b.spec())?;
    let spec = a.spec();
    let sup = (0..spec.node_count()).fold(0.0, |m, i| {
        let xa = a.path.node(usize::min(i, a.index));
        let xb = b.path.node(usize::min(i, b.index));
        f64::max(m, vecops::dist(xa, xb))
    });
    Ok(libm::fabs(a.t() - b.t()) + sup)
}

fn hausdorff_one_sided(a: &HistoryPoint, b: &HistoryPoint) -> f64 {
    let spec = a.spec();
    let z = spec.zero_index();
    let mut worst: f64 = 0.0;
    for i in z..=a.index {
        let ti = spec.time(i);
        let xi = a.path.node(i);
        let mut best = f64::INFINITY;
        for j in z..=b.index {
            let dt = ti - spec.time(j);
            let dx = vecops::dist(xi, b.path.node(j));
            best = f64::min(best, libm::sqrt(dt * dt + dx * dx));
        }
        worst = f64::max(worst, best);
    }
    worst
}

/// Hausdorff distance between the graphs of `x_a` on `[0, t_a]` and `x_b` on
/// `[0, t_b]`, by exhaustive max-min over grid nodes.
pub fn rho_hausdorff(a: &HistoryPoint, b: &HistoryPoint) -> Result<f64> {
    a.spec().check_same(b.spec())?;
    Ok(f64::max(hausdorff_one_sided(a, b), hausdorff_one_sided(b, a)))
}

/// Piecewise-constant slopes on the cells of `[t, T]`, one n-vector per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeSelection {
    n: usize,
    slopes: Vec<f64>,
}

impl SlopeSelection {
    pub fn new(n: usize, slopes: Vec<f64>) -> Result<Self> {
        if n == 0 || !slopes.len().is_multiple_of(n) {
            return Err(Error::Construction("slope data is not a whole number of n-vectors".into()));
        }
        if slopes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Construction("non-finite slope".into()));
        }
        Ok(Self { n, slopes })
    }

    /// The same slope on `cells` cells.
    pub fn constant(slope: &[f64], cells: usize) -> Self {
        let mut slopes = Vec::with_capacity(cells * slope.len());
        for _ in 0..cells {
            slopes.extend_from_slice(slope);
        }
        Self { n: slope.len(), slopes }
    }

    /// Zero slopes on the cells of `[t, T]` for `point`.
    pub fn zero_for(point: &HistoryPoint) -> Self {
        let cells = point.spec().last_index() - point.index();
        Self { n: point.spec().n, slopes: alloc::vec![0.0; cells * point.spec().n] }
    }

    pub fn cells(&self) -> usize {
        self.slopes.len() / self.n
    }

    pub fn slope(&self, cell: usize) -> &[f64] {
        &self.slopes[cell * self.n..(cell + 1) * self.n]
    }

    /// Largest slope norm, the Lipschitz constant of the extension on `[t, T]`.
    pub fn lipschitz(&self) -> f64 {
        (0..self.cells()).fold(0.0, |m, k| f64::max(m, vecops::norm(self.slope(k))))
    }
}

/// Forward Euler extension of the history by the slopes: a member of `Lip(t, x(·))`.
pub fn extend(point: &HistoryPoint, sel: &SlopeSelection) -> Result<PathGrid> {
    let spec = *point.spec();
    let cells = spec.last_index() - point.index;
    if sel.n != spec.n {
        return Err(Error::GridMismatch(format!("slopes have dimension {}, path {}", sel.n, spec.n)));
    }
    if sel.cells() != cells {
        return Err(domain!("selection covers {} cells, [t, T] has {cells}", sel.cells()));
    }
    let mut out = point.path.clone();
    for k in 0..cells {
        let i = point.index + k;
        let (head, tail) = out.samples.split_at_mut((i + 1) * spec.n);
        let prev = &head[i * spec.n..];
        for (d, slot) in tail[..spec.n].iter_mut().enumerate() {
            *slot = prev[d] + spec.step * sel.slope(k)[d];
        }
    }
    Ok(out)
}

/// Membership in `Y(t, x(·))`: `y` agrees with the history on `[-h, t]` and every
/// forward cell slope obeys `||y'|| <= c (1 + max_{xi <= tau} ||y(xi)||)`.
pub fn in_y(point: &HistoryPoint, y: &PathGrid, c: f64) -> Result<bool> {
    point.spec().check_same(y.spec())?;
    let spec = point.spec();
    if (0..=point.index).any(|i| point.path.node(i) != y.node(i)) {
        return Ok(false);
    }
    let mut running = y.max_norm_through(point.index);
    for i in point.index..spec.last_index() {
        let slope = vecops::dist(y.node(i + 1), y.node(i)) / spec.step;
        let bound = c * (1.0 + running);
        if slope > bound + 1e-9 * (1.0 + bound) {
            return Ok(false);
        }
        running = f64::max(running, vecops::norm(y.node(i + 1)));
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec1() -> GridSpec {
        GridSpec::new(1, 1.0, 2.0, 0.25).unwrap()
    }

    #[test]
    fn grid_construction_checks_divisibility() {
        assert!(GridSpec::new(1, 1.0, 2.0, 0.3).is_err());
        assert!(GridSpec::new(0, 1.0, 2.0, 0.5).is_err());
        let s = GridSpec::new(2, 1.0, 2.0, 0.01).unwrap();
        assert_eq!(s.node_count(), 301);
        assert_eq!(s.index_of(0.0).unwrap(), 100);
        assert!(s.index_of(0.005).is_err());
        assert!(s.index_of(2.5).is_err());
    }

    #[test]
    fn interpolation_between_nodes() {
        let p = PathGrid::from_scalar_fn(spec1(), |t| t * t).unwrap();
        assert_eq!(p.value_at(0.5).unwrap(), vec![0.25]);
        // midpoint of the chord between 0.5 and 0.75
        let v = p.value_at(0.625).unwrap()[0];
        assert!((v - 0.5 * (0.25 + 0.5625)).abs() < 1e-14);
    }

    #[test]
    fn uniform_norm_examples() {
        let s = spec1();
        assert_eq!(uniform_norm(&PathGrid::zeros(s), 1.0).unwrap(), 0.0);
        let c = GridSpec::new(2, 1.0, 2.0, 0.25).unwrap();
        assert!((uniform_norm(&PathGrid::constant(c, &[3.0, 4.0]), 0.5).unwrap() - 5.0).abs() < 1e-15);
        let lin = PathGrid::from_scalar_fn(s, |t| t).unwrap();
        assert_eq!(uniform_norm(&lin, 1.0).unwrap(), 1.0);
        assert_eq!(uniform_norm(&lin, -0.5).unwrap(), 1.0); // |x(-1)| = 1
        assert!(uniform_norm(&lin, 0.1).is_err());
    }

    #[test]
    fn dist_examples() {
        let s = GridSpec::new(2, 1.0, 2.0, 0.25).unwrap();
        let x = PathGrid::zeros(s);
        let a = HistoryPoint::new(0.0, x.clone()).unwrap();
        assert_eq!(dist(&a, &a).unwrap(), 0.0);
        let b = HistoryPoint::new(1.0, x).unwrap();
        assert_eq!(dist(&a, &b).unwrap(), 1.0);
        let y = HistoryPoint::new(0.0, PathGrid::constant(s, &[3.0, 4.0])).unwrap();
        assert!((dist(&a, &y).unwrap() - 5.0).abs() < 1e-15);
        let other = HistoryPoint::new(0.0, PathGrid::zeros(spec1())).unwrap();
        assert!(matches!(dist(&a, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn stop_path_examples() {
        let s = spec1();
        let c = PathGrid::constant(s, &[2.0]);
        assert_eq!(stop_path(&c, 0.5).unwrap(), c);
        let lin = PathGrid::from_scalar_fn(s, |t| t).unwrap();
        assert_eq!(stop_path(&lin, 2.0).unwrap(), lin);
        let st = stop_path(&lin, 0.0).unwrap();
        let want = PathGrid::from_scalar_fn(s, |t| if t < 0.0 { t } else { 0.0 }).unwrap();
        assert_eq!(st, want);
    }

    #[test]
    fn rho_examples() {
        let s = spec1();
        let x = PathGrid::from_scalar_fn(s, |t| t).unwrap();
        let y = PathGrid::from_scalar_fn(s, |t| if t <= 0.5 { t } else { 0.5 - (t - 0.5) }).unwrap();
        let a = HistoryPoint::new(0.5, x.clone()).unwrap();
        let b = HistoryPoint::new(0.5, y).unwrap();
        assert_eq!(rho(&a, &b).unwrap(), 0.0);
        assert!(dist(&a, &b).unwrap() > 0.0);
        assert_eq!(rho(&a, &a).unwrap(), 0.0);
        let z0 = HistoryPoint::new(0.0, PathGrid::zeros(s)).unwrap();
        let z1 = HistoryPoint::new(1.0, PathGrid::zeros(s)).unwrap();
        assert_eq!(rho(&z0, &z1).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_examples() {
        let s = spec1();
        let c = PathGrid::constant(s, &[0.7]);
        let a = HistoryPoint::new(0.0, c.clone()).unwrap();
        let b = HistoryPoint::new(1.0, c).unwrap();
        assert_eq!(rho_hausdorff(&a, &a).unwrap(), 0.0);
        assert!((rho_hausdorff(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn extend_examples() {
        let s = spec1();
        let x = PathGrid::from_scalar_fn(s, |t| 1.0 + t).unwrap();
        let p = HistoryPoint::new(0.5, x.clone()).unwrap();
        let zero = extend(&p, &SlopeSelection::zero_for(&p)).unwrap();
        assert_eq!(zero, stop_path(&x, 0.5).unwrap());
        let y = extend(&p, &SlopeSelection::constant(&[2.0], 6)).unwrap();
        for i in 0..s.node_count() {
            let t = s.time(i);
            let want = if t <= 0.5 { 1.0 + t } else { 1.5 + 2.0 * (t - 0.5) };
            assert!((y.node(i)[0] - want).abs() < 1e-14);
        }
        assert!(extend(&p, &SlopeSelection::constant(&[2.0], 5)).is_err());
    }

    #[test]
    fn in_y_examples() {
        let s = spec1();
        let x = PathGrid::constant(s, &[1.0]);
        let p = HistoryPoint::new(0.5, x.clone()).unwrap();
        assert!(in_y(&p, &stop_path(&x, 0.5).unwrap(), 0.3).unwrap());
        let c = 0.5;
        let fast = extend(&p, &SlopeSelection::constant(&[2.0 * c * 2.0], 6)).unwrap();
        assert!(!in_y(&p, &fast, c).unwrap());
        let mut bad = stop_path(&x, 0.5).unwrap();
        bad.node_mut(1)[0] = 1.5;
        assert!(!in_y(&p, &bad, c).unwrap());
    }
}
