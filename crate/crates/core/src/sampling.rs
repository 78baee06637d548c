//! Seeded generators for random histories, positions and selections.
//!
//! Shapes are mixed on purpose: random walks, smooth sums of sines, constant
//! histories, and histories whose sup norm is attained strictly in the past.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::path::{GridSpec, HistoryPoint, PathGrid, SlopeSelection};
use crate::vecops;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal n-vector.
pub fn gaussian(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform point in the closed ball of radius `r`.
pub fn in_ball(rng: &mut SeededRng, n: usize, r: f64) -> Vec<f64> {
    let g = gaussian(rng, n);
    let len = vecops::norm(&g);
    if len == 0.0 {
        return alloc::vec![0.0; n];
    }
    let u: f64 = rng.random_range(0.0..=1.0);
    let rad = r * libm::pow(u, 1.0 / n as f64);
    vecops::scale(&g, rad / len)
}

/// Uniform unit vector.
pub fn on_sphere(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, n);
        let len = vecops::norm(&g);
        if len > 1e-12 {
            return vecops::scale(&g, 1.0 / len);
        }
    }
}

/// History shapes produced by [`random_path`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Walk,
    Smooth,
    Constant,
    PastPeak,
}

const SHAPES: [Shape; 4] = [Shape::Walk, Shape::Smooth, Shape::Constant, Shape::PastPeak];

/// A random path of amplitude about `scale` on the whole grid.
pub fn random_path(spec: GridSpec, rng: &mut SeededRng, scale: f64) -> PathGrid {
    let shape = SHAPES[rng.random_range(0..SHAPES.len())];
    random_path_of(spec, rng, scale, shape)
}

pub fn random_path_of(spec: GridSpec, rng: &mut SeededRng, scale: f64, shape: Shape) -> PathGrid {
    let n = spec.n;
    let count = spec.node_count();
    let mut samples = Vec::with_capacity(count * n);
    match shape {
        Shape::Walk => {
            let mut cur = vecops::scale(&gaussian(rng, n), 0.5 * scale);
            let kick = scale * libm::sqrt(spec.step);
            for _ in 0..count {
                samples.extend_from_slice(&cur);
                let g = gaussian(rng, n);
                vecops::axpy(&mut cur, kick, &g);
            }
        }
        Shape::Smooth => {
            let amp: Vec<f64> = vecops::scale(&gaussian(rng, n), 0.6 * scale);
            let freq: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
            let phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.3)).collect();
            let off: Vec<f64> = vecops::scale(&gaussian(rng, n), 0.3 * scale);
            for i in 0..count {
                let t = spec.time(i);
                for k in 0..n {
                    samples.push(off[k] + amp[k] * libm::sin(freq[k] * t + phase[k]));
                }
            }
        }
        Shape::Constant => {
            let c = vecops::scale(&gaussian(rng, n), scale);
            for _ in 0..count {
                samples.extend_from_slice(&c);
            }
        }
        Shape::PastPeak => {
            // a bump in [-h, 0] over a small background, so the sup norm
            // on [-h, t] is attained before the current time
            let base = vecops::scale(&gaussian(rng, n), 0.2 * scale);
            let dir = on_sphere(rng, n);
            let height = scale * rng.random_range(1.0..3.0);
            let centre = -spec.h * rng.random_range(0.2..0.8);
            let width = spec.h * 0.15;
            for i in 0..count {
                let t = spec.time(i);
                let bump = height * libm::exp(-((t - centre) / width) * ((t - centre) / width));
                for k in 0..n {
                    samples.push(base[k] + bump * dir[k]);
                }
            }
        }
    }
    PathGrid::from_samples(spec, samples).expect("generated samples are finite")
}

/// Random grid time in `[lo, hi]`.
pub fn random_node(spec: &GridSpec, rng: &mut SeededRng, lo: f64, hi: f64) -> usize {
    let a = spec.nearest_index(lo).max(spec.zero_index());
    let b = spec.nearest_index(hi).max(a);
    rng.random_range(a..=b)
}

/// Random position with `t` in `[lo, hi]`.
pub fn random_point(spec: GridSpec, rng: &mut SeededRng, scale: f64, lo: f64, hi: f64) -> HistoryPoint {
    let path = random_path(spec, rng, scale);
    let i = random_node(&spec, rng, lo, hi);
    HistoryPoint::at_index(i, path).expect("node drawn from [0, T]")
}

/// A copy of `path` that agrees on nodes `<= index` and differs afterwards.
pub fn perturb_after(path: &PathGrid, index: usize, rng: &mut SeededRng, scale: f64) -> PathGrid {
    let mut out = path.clone();
    let n = path.n();
    for i in index + 1..path.spec().node_count() {
        let g = gaussian(rng, n);
        vecops::axpy(out.node_mut(i), scale, &g);
    }
    out
}

/// Piecewise-constant slopes on `[t, T]`, each uniform in the ball of radius `r`.
pub fn random_selection(point: &HistoryPoint, rng: &mut SeededRng, r: f64) -> SlopeSelection {
    let n = point.spec().n;
    let cells = point.spec().last_index() - point.index();
    let mut slopes = Vec::with_capacity(cells * n);
    for _ in 0..cells {
        slopes.extend(in_ball(rng, n, r));
    }
    SlopeSelection::new(n, slopes).expect("finite slopes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let spec = GridSpec::new(2, 1.0, 1.0, 0.05).unwrap();
        let a = random_path(spec, &mut rng(7), 1.0);
        let b = random_path(spec, &mut rng(7), 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn past_peak_shape_peaks_before_zero() {
        let spec = GridSpec::new(1, 1.0, 1.0, 0.01).unwrap();
        let p = random_path_of(spec, &mut rng(3), 1.0, Shape::PastPeak);
        let z = spec.zero_index();
        assert!(p.max_norm_through(z) > vecops::norm(p.node(z)) + 0.2);
    }

    #[test]
    fn perturbation_keeps_history() {
        let spec = GridSpec::new(1, 1.0, 1.0, 0.1).unwrap();
        let mut r = rng(1);
        let p = random_path(spec, &mut r, 1.0);
        let q = perturb_after(&p, 13, &mut r, 1.0);
        assert_eq!(&p.samples()[..14], &q.samples()[..14]);
        assert_ne!(p, q);
    }
}
