//! Linear-Gaussian toy problem with a closed-form posterior.
//!
//! `y_n = h_nᵀ θ + e_n`, `e_n ~ N(0, 1/noise_precision)`, independent
//! Gaussian priors on every coordinate. With a single variable this is the
//! scalar conjugate case.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Model, ObsSubset, Simulate};
use crate::error::{Error, Result};
use crate::particles::{BoxPrior, GaussianPrior, ScalarPrior};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    pub priors: Vec<GaussianPrior>,
    pub supports: Vec<BoxPrior>,
    /// Row `n` is `h_n`.
    pub design: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    pub noise_precision: f64,
}

impl LinearGaussianModel {
    pub fn new(
        priors: Vec<GaussianPrior>,
        supports: Vec<BoxPrior>,
        design: Vec<Vec<f64>>,
        observations: Vec<f64>,
        noise_precision: f64,
    ) -> Result<Self> {
        let j = priors.len();
        if j == 0 || supports.len() != j {
            return Err(Error::Config("priors and supports must match".into()));
        }
        if design.len() != observations.len() || design.iter().any(|r| r.len() != j) {
            return Err(Error::Config("design matrix shape mismatch".into()));
        }
        if !(noise_precision > 0.0) {
            return Err(Error::Config("noise precision must be positive".into()));
        }
        Ok(Self {
            priors,
            supports,
            design,
            observations,
            noise_precision,
        })
    }

    /// Exact posterior mean and covariance.
    pub fn posterior(&self) -> (Vec<f64>, DMatrix<f64>) {
        let j = self.priors.len();
        let mut prec = DMatrix::<f64>::zeros(j, j);
        let mut rhs = DVector::<f64>::zeros(j);
        for (k, p) in self.priors.iter().enumerate() {
            prec[(k, k)] += p.precision;
            rhs[k] += p.precision * p.mean;
        }
        for (h, y) in self.design.iter().zip(&self.observations) {
            for a in 0..j {
                rhs[a] += self.noise_precision * h[a] * y;
                for b in 0..j {
                    prec[(a, b)] += self.noise_precision * h[a] * h[b];
                }
            }
        }
        let cov = prec.try_inverse().expect("posterior precision is positive definite");
        let mean = &cov * rhs;
        (mean.iter().copied().collect(), cov)
    }

    fn residual(&self, theta: &[f64], n: usize) -> f64 {
        let h = &self.design[n];
        self.observations[n] - h.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl Model for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.priors.len()
    }

    fn n_obs(&self) -> usize {
        self.observations.len()
    }

    fn scalar_prior(&self, j: usize) -> ScalarPrior {
        ScalarPrior::Gaussian {
            prior: self.priors[j],
            support: self.supports[j],
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.priors.iter().zip(theta).map(|(p, &x)| p.log_density(x)).sum()
    }

    fn d_log_prior(&self, j: usize, theta: &[f64]) -> f64 {
        self.priors[j].d_log_density(theta[j])
    }

    fn hess_row_log_prior(&self, j: usize, _theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[j] = -self.priors[j].precision;
    }

    fn log_likelihood_obs(&self, theta: &[f64], n: usize) -> f64 {
        let r = self.residual(theta, n);
        0.5 * (self.noise_precision / (2.0 * std::f64::consts::PI)).ln() - 0.5 * self.noise_precision * r * r
    }

    fn grad_log_likelihood(&self, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let s = subset.scale() * self.noise_precision;
        for n in subset.iter() {
            let r = self.residual(theta, n);
            for (o, h) in out.iter_mut().zip(&self.design[n]) {
                *o += s * r * h;
            }
        }
    }

    fn hess_row_log_likelihood(&self, j: usize, _theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let s = subset.scale() * self.noise_precision;
        for n in subset.iter() {
            let h = &self.design[n];
            for (o, hk) in out.iter_mut().zip(h) {
                *o -= s * h[j] * hk;
            }
        }
    }
}

impl Simulate for LinearGaussianModel {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Self> {
        let sd = self.noise_precision.sqrt().recip();
        let mut out = self.clone();
        for (y, h) in out.observations.iter_mut().zip(&self.design) {
            let z: f64 = StandardNormal.sample(rng);
            *y = h.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + sd * z;
        }
        Ok(out)
    }
}

/// Toy conjugate scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyScenario {
    pub dim: usize,
    pub n_obs: usize,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub noise_sd: f64,
    /// Search box half-width in prior standard deviations.
    pub box_sigmas: f64,
    /// Off-diagonal loading of the design (0 gives independent variables).
    pub coupling: f64,
}

impl Default for ToyScenario {
    fn default() -> Self {
        Self {
            dim: 1,
            n_obs: 4,
            prior_mean: 0.0,
            prior_sd: 1.0,
            noise_sd: 1.0,
            box_sigmas: 3.0,
            coupling: 0.0,
        }
    }
}

impl ToyScenario {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_obs == 0 {
            return Err(Error::Config("toy scenario needs variables and observations".into()));
        }
        if !(self.prior_sd > 0.0) || !(self.noise_sd > 0.0) || !(self.box_sigmas > 0.0) {
            return Err(Error::Config("toy scale parameters must be positive".into()));
        }
        Ok(())
    }

    /// Draws `θ` from its prior (clamped to the box) and noisy observations.
    pub fn generate(&self, rng: &mut Rng) -> Result<(Vec<f64>, LinearGaussianModel)> {
        self.validate()?;
        let prior = GaussianPrior::new(self.prior_mean, 1.0 / (self.prior_sd * self.prior_sd))?;
        let support = BoxPrior::new(self.prior_mean, 2.0 * self.box_sigmas * self.prior_sd)?;
        let truth: Vec<f64> = (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (self.prior_mean + self.prior_sd * z).clamp(support.lo(), support.hi())
            })
            .collect();
        let design: Vec<Vec<f64>> = (0..self.n_obs)
            .map(|n| {
                (0..self.dim)
                    .map(|k| if k == n % self.dim { 1.0 } else { self.coupling })
                    .collect()
            })
            .collect();
        let observations = design
            .iter()
            .map(|h| {
                let z: f64 = StandardNormal.sample(rng);
                h.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + self.noise_sd * z
            })
            .collect();
        let model = LinearGaussianModel::new(
            vec![prior; self.dim],
            vec![support; self.dim],
            design,
            observations,
            1.0 / (self.noise_sd * self.noise_sd),
        )?;
        Ok((truth, model))
    }
}
