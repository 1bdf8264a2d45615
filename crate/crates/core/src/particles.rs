//! Discrete variational marginals and the two projection operators used by
//! every update: the box clamp on positions and the alternating projection
//! of weights onto the floored simplex.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default weight floor.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-6;
/// Default stopping tolerance of the alternating projection.
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-6;
/// Iteration cap of the alternating projection.
pub const PROJECTION_MAX_ITER: usize = 1000;

/// Uniform prior over `[center - width/2, center + width/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPrior {
    pub center: f64,
    pub width: f64,
}

impl BoxPrior {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() || !width.is_finite() {
            return Err(Error::DegeneratePrior(format!("box width {width}")));
        }
        Ok(Self { center, width })
    }

    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self> {
        Self::new(0.5 * (lo + hi), hi - lo)
    }

    pub fn lo(&self) -> f64 {
        self.center - 0.5 * self.width
    }

    pub fn hi(&self) -> f64 {
        self.center + 0.5 * self.width
    }
}

/// Scalar Gaussian prior `N(mean, 1/precision)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: f64,
    pub precision: f64,
}

impl GaussianPrior {
    pub fn new(mean: f64, precision: f64) -> Result<Self> {
        if !(precision > 0.0) || !precision.is_finite() {
            return Err(Error::DegeneratePrior(format!("precision {precision}")));
        }
        Ok(Self { mean, precision })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        0.5 * (self.precision / (2.0 * std::f64::consts::PI)).ln() - 0.5 * self.precision * d * d
    }

    pub fn d_log_density(&self, x: f64) -> f64 {
        -self.precision * (x - self.mean)
    }
}

/// Bivariate Gaussian prior with a symmetric positive-definite precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior2 {
    pub mean: [f64; 2],
    pub precision: [[f64; 2]; 2],
}

impl GaussianPrior2 {
    pub fn new(mean: [f64; 2], precision: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = precision;
        let det = a * d - b * c;
        if (b - c).abs() > 1e-12 * (1.0 + b.abs()) || !(a > 0.0) || !(det > 0.0) {
            return Err(Error::DegeneratePrior(
                "precision matrix is not symmetric positive-definite".into(),
            ));
        }
        Ok(Self { mean, precision })
    }

    pub fn isotropic(mean: [f64; 2], precision: f64) -> Result<Self> {
        Self::new(mean, [[precision, 0.0], [0.0, precision]])
    }

    pub fn det(&self) -> f64 {
        let [[a, b], [c, d]] = self.precision;
        a * d - b * c
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let u = self.precision;
        let q = d[0] * (u[0][0] * d[0] + u[0][1] * d[1]) + d[1] * (u[1][0] * d[0] + u[1][1] * d[1]);
        0.5 * (self.det() / (2.0 * std::f64::consts::PI)).ln() - 0.5 * q
    }

    /// `-U (x - mean)`.
    pub fn grad_log_density(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let u = self.precision;
        [-(u[0][0] * d[0] + u[0][1] * d[1]), -(u[1][0] * d[0] + u[1][1] * d[1])]
    }

    /// Marginal of coordinate `k`.
    pub fn marginal(&self, k: usize) -> GaussianPrior {
        let [[a, _], [_, d]] = self.precision;
        let det = self.det();
        let var = if k == 0 { d / det } else { a / det };
        GaussianPrior {
            mean: self.mean[k],
            precision: 1.0 / var,
        }
    }

    /// Draws one sample via the Cholesky factor of the covariance.
    pub fn sample(&self, rng: &mut Rng) -> [f64; 2] {
        let [[a, b], [_, d]] = self.precision;
        let det = self.det();
        let (c00, c01, c11) = (d / det, -b / det, a / det);
        let l00 = c00.sqrt();
        let l10 = c01 / l00;
        let l11 = (c11 - l10 * l10).max(0.0).sqrt();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [self.mean[0] + l00 * z0, self.mean[1] + l10 * z0 + l11 * z1]
    }
}

/// Prior of one scalar variable together with its search interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarPrior {
    Box(BoxPrior),
    Gaussian { prior: GaussianPrior, support: BoxPrior },
}

impl ScalarPrior {
    pub fn bounds(&self) -> (f64, f64) {
        let b = self.support();
        (b.lo(), b.hi())
    }

    pub fn support(&self) -> BoxPrior {
        match *self {
            ScalarPrior::Box(b) => b,
            ScalarPrior::Gaussian { support, .. } => support,
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            ScalarPrior::Box(b) => -b.width.ln(),
            ScalarPrior::Gaussian { prior, .. } => prior.log_density(x),
        }
    }

    pub fn d_log_density(&self, x: f64) -> f64 {
        match self {
            ScalarPrior::Box(_) => 0.0,
            ScalarPrior::Gaussian { prior, .. } => prior.d_log_density(x),
        }
    }

    pub fn d2_log_density(&self) -> f64 {
        match self {
            ScalarPrior::Box(_) => 0.0,
            ScalarPrior::Gaussian { prior, .. } => -prior.precision,
        }
    }

    /// Draws one position: uniform inside a box, or a Gaussian draw clamped to the support.
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match self {
            ScalarPrior::Box(b) => b.lo() + b.width * rng.random::<f64>(),
            ScalarPrior::Gaussian { prior, support } => {
                let z: f64 = StandardNormal.sample(rng);
                (prior.mean + z / prior.precision.sqrt()).clamp(support.lo(), support.hi())
            }
        }
    }
}

/// One variable's discrete variational marginal: `Np` positions with simplex weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ParticleSet {
    /// Builds a set, checking the structural invariants.
    pub fn new(positions: Vec<f64>, weights: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        if positions.len() != weights.len() {
            return Err(Error::Config("positions and weights differ in length".into()));
        }
        Ok(Self {
            positions,
            weights,
            lo,
            hi,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Index of the highest-weight particle; ties go to the lowest index.
    pub fn map_index(&self) -> usize {
        let mut best = 0;
        for (n, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = n;
            }
        }
        best
    }

    pub fn map_estimate(&self) -> f64 {
        self.positions[self.map_index()]
    }

    pub fn mmse_estimate(&self) -> f64 {
        self.positions.iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }

    /// `Σ w ln w`.
    pub fn neg_entropy(&self) -> f64 {
        self.weights.iter().map(|&w| w * w.ln()).sum()
    }

    /// Checks box, floor and simplex invariants.
    pub fn is_feasible(&self, eps: f64, sum_tol: f64) -> bool {
        let sum: f64 = self.weights.iter().sum();
        (sum - 1.0).abs() <= sum_tol
            && self.weights.iter().all(|&w| w >= eps - 1e-12 && w <= 1.0 + 1e-12)
            && self.positions.iter().all(|&p| p >= self.lo && p <= self.hi)
    }
}

/// Draws `np` positions i.i.d. from `prior` with uniform weights.
pub fn init_particles(prior: &ScalarPrior, np: usize, rng: &mut Rng) -> Result<ParticleSet> {
    if np < 2 {
        return Err(Error::TooFewParticles(np));
    }
    match prior {
        ScalarPrior::Box(b) => {
            BoxPrior::new(b.center, b.width)?;
        }
        ScalarPrior::Gaussian { prior: g, support } => {
            GaussianPrior::new(g.mean, g.precision)?;
            BoxPrior::new(support.center, support.width)?;
        }
    }
    let positions = (0..np).map(|_| prior.draw(rng)).collect();
    let (lo, hi) = prior.bounds();
    ParticleSet::new(positions, vec![1.0 / np as f64; np], lo, hi)
}

/// Result of a box projection: the clamped value and its (sub)derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxProjection {
    pub value: f64,
    pub derivative: f64,
}

/// Clamp onto `[lo, hi]`; the derivative is 1 inside the interval and 0 outside.
pub fn project_box(x: f64, lo: f64, hi: f64) -> Result<BoxProjection> {
    if lo > hi {
        return Err(Error::InvalidInterval { lo, hi });
    }
    Ok(clamp_with_derivative(x, lo, hi))
}

#[inline]
pub(crate) fn clamp_with_derivative(x: f64, lo: f64, hi: f64) -> BoxProjection {
    if x < lo {
        BoxProjection {
            value: lo,
            derivative: 0.0,
        }
    } else if x > hi {
        BoxProjection {
            value: hi,
            derivative: 0.0,
        }
    } else {
        BoxProjection {
            value: x,
            derivative: 1.0,
        }
    }
}

/// How long the alternating projection runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProjectionStop {
    /// Until the step norm drops below `tol`; more than `max_iter` steps is an error.
    Tolerance { tol: f64, max_iter: usize },
    /// Exactly this many steps (tape replay).
    Fixed(usize),
}

/// Output of [`project_simplex_alternating`] with everything backprop needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexProjection {
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Per executed step, which coordinates stayed above the floor.
    pub masks: Vec<Vec<bool>>,
    /// Coordinates that received the closing sum correction.
    pub free: Vec<bool>,
}

/// Alternating projection onto `{Σ y = 1} ∩ {y ≥ ε}`.
///
/// Each step is `y ← max(y − (Σy − 1)/Np, ε)`. Once the active set has
/// settled the remaining steps only shift the free coordinates by a
/// geometric series; a closing step applies its limit so the output sums to
/// one to rounding.
pub fn project_simplex_alternating(w: &[f64], eps: f64, tol: f64) -> Result<SimplexProjection> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("projection tolerance {tol}")));
    }
    project_simplex(
        w,
        eps,
        ProjectionStop::Tolerance {
            tol,
            max_iter: PROJECTION_MAX_ITER,
        },
    )
}

pub fn project_simplex(w: &[f64], eps: f64, stop: ProjectionStop) -> Result<SimplexProjection> {
    let np = w.len();
    if np == 0 || !(eps >= 0.0) || eps * np as f64 >= 1.0 {
        return Err(Error::InfeasibleFloor { eps, np });
    }
    let inv = 1.0 / np as f64;
    let mut y = w.to_vec();
    let mut next = vec![0.0; np];
    let mut masks = Vec::new();
    let mut iterations = 0;
    loop {
        let shift = (y.iter().sum::<f64>() - 1.0) * inv;
        let mut mask = vec![true; np];
        let mut err2 = 0.0;
        for n in 0..np {
            let v = y[n] - shift;
            next[n] = if v >= eps {
                v
            } else {
                mask[n] = false;
                eps
            };
            let d = next[n] - y[n];
            err2 += d * d;
        }
        if !err2.is_finite() {
            return Err(Error::ProjectionDiverged(iterations));
        }
        std::mem::swap(&mut y, &mut next);
        masks.push(mask);
        iterations += 1;
        match stop {
            ProjectionStop::Tolerance { tol, max_iter } => {
                if err2.sqrt() <= tol {
                    break;
                }
                if iterations >= max_iter {
                    return Err(Error::ProjectionDiverged(iterations));
                }
            }
            ProjectionStop::Fixed(k) => {
                if iterations >= k.max(1) {
                    break;
                }
            }
        }
    }
    let free = masks.last().cloned().unwrap_or_else(|| vec![true; np]);
    let n_free = free.iter().filter(|&&f| f).count();
    if n_free > 0 {
        let shift = (y.iter().sum::<f64>() - 1.0) / n_free as f64;
        for n in 0..np {
            if free[n] {
                y[n] = (y[n] - shift).max(eps);
            }
        }
    }
    Ok(SimplexProjection {
        weights: y,
        iterations,
        masks,
        free,
    })
}

impl SimplexProjection {
    /// Vector-Jacobian product: maps an adjoint of the output to an adjoint of the input.
    pub fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        let np = upstream.len();
        let mut g = upstream.to_vec();
        closing_transpose(&self.free, &mut g);
        for mask in self.masks.iter().rev() {
            for n in 0..np {
                if !mask[n] {
                    g[n] = 0.0;
                }
            }
            center(&mut g);
        }
        g
    }

    /// Jacobian-vector product.
    pub fn jvp(&self, tangent: &[f64]) -> Vec<f64> {
        let np = tangent.len();
        let mut g = tangent.to_vec();
        for mask in &self.masks {
            center(&mut g);
            for n in 0..np {
                if !mask[n] {
                    g[n] = 0.0;
                }
            }
        }
        // forward closing map: y_F -= Σy / |F|
        let n_free = self.free.iter().filter(|&&f| f).count();
        if n_free > 0 {
            let s: f64 = g.iter().sum::<f64>() / n_free as f64;
            for n in 0..np {
                if self.free[n] {
                    g[n] -= s;
                }
            }
        }
        g
    }
}

fn center(g: &mut [f64]) {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter_mut().for_each(|x| *x -= mean);
}

// Transpose of y ↦ y − 1_F (1ᵀy)/|F|.
fn closing_transpose(free: &[bool], g: &mut [f64]) {
    let n_free = free.iter().filter(|&&f| f).count();
    if n_free == 0 {
        return;
    }
    let s: f64 = free
        .iter()
        .zip(g.iter())
        .filter(|(f, _)| **f)
        .map(|(_, x)| x)
        .sum::<f64>()
        / n_free as f64;
    g.iter_mut().for_each(|x| *x -= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    // Algorithm 2 executed literally, no closing step.
    fn verbatim(w: &[f64], eps: f64, tol: f64) -> Vec<f64> {
        let np = w.len() as f64;
        let mut y = w.to_vec();
        loop {
            let s: f64 = y.iter().sum::<f64>() - 1.0;
            let next: Vec<f64> = y.iter().map(|v| (v - s / np).max(eps)).collect();
            let err = next.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            y = next;
            if err <= tol {
                return y;
            }
        }
    }

    #[test]
    fn uniform_init_weights() {
        let mut rng = stream(1, &[0]);
        let ps = init_particles(&ScalarPrior::Box(BoxPrior::new(0.0, 2.0).unwrap()), 4, &mut rng).unwrap();
        assert_eq!(ps.weights, vec![0.25; 4]);
        assert!(ps.positions.iter().all(|p| (-1.0..=1.0).contains(p)));
    }

    #[test]
    fn single_particle_rejected() {
        let mut rng = stream(1, &[0]);
        let prior = ScalarPrior::Box(BoxPrior::new(0.0, 2.0).unwrap());
        assert_eq!(init_particles(&prior, 1, &mut rng), Err(Error::TooFewParticles(1)));
        assert!(BoxPrior::new(0.0, 0.0).is_err());
        assert!(GaussianPrior::new(0.0, -1.0).is_err());
        assert!(GaussianPrior2::new([0.0; 2], [[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn gaussian_clamping_fraction_matches_monte_carlo() {
        // Independent oracle: plain normal draws counted outside [-1, 1].
        let prior = ScalarPrior::Gaussian {
            prior: GaussianPrior::new(0.0, 10.0).unwrap(),
            support: BoxPrior::from_bounds(-1.0, 1.0).unwrap(),
        };
        let n = 100_000;
        let mut rng = stream(3, &[0]);
        let ps = init_particles(&prior, n, &mut rng).unwrap();
        let clamped = ps.positions.iter().filter(|p| p.abs() == 1.0).count() as f64 / n as f64;

        let mut rng = stream(4, &[0]);
        let sigma = 1.0 / 10f64.sqrt();
        let outside = (0..n)
            .filter(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * sigma).abs() > 1.0
            })
            .count() as f64
            / n as f64;
        // 2Φ(-√10) ≈ 0.001565
        assert!((clamped - outside).abs() < 6e-4, "{clamped} vs {outside}");
        assert!((clamped - 0.001565).abs() < 5e-4);
    }

    #[test]
    fn box_projection_cases() {
        assert_eq!(
            project_box(0.5, 0.0, 1.0).unwrap(),
            BoxProjection {
                value: 0.5,
                derivative: 1.0
            }
        );
        assert_eq!(project_box(1.5, 0.0, 1.0).unwrap().value, 1.0);
        assert_eq!(project_box(1.5, 0.0, 1.0).unwrap().derivative, 0.0);
        let p = project_box(-3.0, -1.0, 1.0).unwrap();
        assert_eq!((p.value, p.derivative), (-1.0, 0.0));
        assert!(project_box(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn simplex_fixed_point_and_symmetry() {
        let third = 1.0 / 3.0;
        let p = project_simplex_alternating(&[third; 3], 1e-6, 1e-6).unwrap();
        assert_eq!(p.iterations, 1);
        for w in &p.weights {
            assert_abs_diff_eq!(*w, third, epsilon = 1e-15);
        }
        let p = project_simplex_alternating(&[0.5; 3], 1e-6, 1e-6).unwrap();
        for w in &p.weights {
            assert_abs_diff_eq!(*w, third, epsilon = 1e-12);
        }
    }

    #[test]
    fn simplex_regression_vector() {
        // Frozen from the verbatim loop: [0.9, 0.2, -0.1], ε = 0.01, tol = 1e-6.
        let frozen = verbatim(&[0.9, 0.2, -0.1], 0.01, 1e-6);
        let expected = [0.845, 0.145, 0.01];
        for (a, b) in frozen.iter().zip(&expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
        let p = project_simplex_alternating(&[0.9, 0.2, -0.1], 0.01, 1e-6).unwrap();
        for (a, b) in p.weights.iter().zip(&expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(p.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn simplex_infeasible_floor() {
        assert!(project_simplex_alternating(&[0.5, 0.5], 0.5, 1e-6).is_err());
        assert!(project_simplex_alternating(&[0.5, 0.5], 0.1, 0.0).is_err());
    }

    #[test]
    fn simplex_vjp_matches_finite_differences() {
        let w = [0.7, -0.2, 0.3, 0.45, 0.05];
        let eps = 0.01;
        let base = project_simplex_alternating(&w, eps, 1e-9).unwrap();
        let stop = ProjectionStop::Fixed(base.iterations);
        let up = [0.3, -1.0, 0.5, 2.0, -0.7];
        let g = base.vjp(&up);
        for k in 0..w.len() {
            let h = 1e-7;
            let mut wp = w;
            wp[k] += h;
            let mut wm = w;
            wm[k] -= h;
            let fp: f64 = project_simplex(&wp, eps, stop)
                .unwrap()
                .weights
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum();
            let fm: f64 = project_simplex(&wm, eps, stop)
                .unwrap()
                .weights
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum();
            assert_abs_diff_eq!(g[k], (fp - fm) / (2.0 * h), epsilon = 1e-6);
        }
        let t = [1.0, 0.0, -2.0, 0.5, 0.25];
        let jv = base.jvp(&t);
        let lhs: f64 = jv.iter().zip(&up).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.iter().zip(&t).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn map_ties_go_to_lowest_index() {
        let ps = ParticleSet::new(vec![1.0, 2.0, 3.0], vec![0.4, 0.4, 0.2], 0.0, 4.0).unwrap();
        assert_eq!(ps.map_estimate(), 1.0);
        assert_abs_diff_eq!(ps.mmse_estimate(), 1.8, epsilon = 1e-12);
    }

    #[test]
    fn bivariate_marginal_and_sampling() {
        let g = GaussianPrior2::new([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let m0 = g.marginal(0);
        // covariance = inv([[2, .5], [.5, 1]]) = [[1, -.5], [-.5, 2]] / 1.75
        assert_abs_diff_eq!(1.0 / m0.precision, 1.0 / 1.75, epsilon = 1e-12);
        let mut rng = stream(9, &[]);
        let n = 50_000;
        let (mut s0, mut s1, mut s01) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = g.sample(&mut rng);
            let d = [x[0] - 1.0, x[1] + 1.0];
            s0 += d[0] * d[0];
            s1 += d[1] * d[1];
            s01 += d[0] * d[1];
        }
        let n = n as f64;
        assert!((s0 / n - 1.0 / 1.75).abs() < 0.02);
        assert!((s1 / n - 2.0 / 1.75).abs() < 0.04);
        assert!((s01 / n + 0.5 / 1.75).abs() < 0.02);
    }
}
