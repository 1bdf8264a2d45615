//! Measurement models.
//!
//! A [`Model`] exposes a joint log-prior and a log-likelihood that is a sum
//! over observations, together with analytic first derivatives with respect
//! to every scalar variable. Second derivatives (needed only by the unrolled
//! network's backward pass) default to central differences of the analytic
//! gradient; the bundled models override them analytically.

mod multiband;
mod rss;
mod toy;

pub use multiband::{MultibandDraw, MultibandModel, MultibandScenario, MultibandVar};
pub use rss::{
    rss_grad_s0, rss_log_likelihood, rss_measurement, RssDataset, RssLocalizationModel, RssReference, RssScenario,
};
pub use toy::{LinearGaussianModel, ToyScenario};

use crate::error::{Error, Result};
use crate::particles::ScalarPrior;
use crate::rng::Rng;
use rand::seq::index;

/// A subset Ω of observation indices, with the `N / |Ω|` scale of the
/// subsampled likelihood estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsSubset {
    indices: Option<Vec<usize>>,
    total: usize,
}

impl ObsSubset {
    pub fn all(total: usize) -> Self {
        Self { indices: None, total }
    }

    pub fn from_indices(total: usize, mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySubset);
        }
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= total {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: total,
                });
            }
        }
        Ok(Self {
            indices: Some(indices),
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.as_ref().map_or(self.total, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `N / |Ω|`.
    pub fn scale(&self) -> f64 {
        self.total as f64 / self.len() as f64
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.total
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = usize> + '_> {
        match &self.indices {
            None => Box::new(0..self.total),
            Some(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

/// Uniform without-replacement subset of size `size` from `0..n`.
pub fn subsample_observations(n: usize, size: usize, rng: &mut Rng) -> Result<ObsSubset> {
    if size == 0 || size > n {
        return Err(Error::SubsetSize { size, n });
    }
    if size == n {
        return Ok(ObsSubset::all(n));
    }
    ObsSubset::from_indices(n, index::sample(rng, n, size).into_vec())
}

/// Capability contract of a measurement model over `dim()` scalar variables.
pub trait Model: Sync + Send {
    fn dim(&self) -> usize;

    fn n_obs(&self) -> usize;

    /// Marginal prior of variable `j`, used to draw initial particles; carries the search box.
    fn scalar_prior(&self, j: usize) -> ScalarPrior;

    fn bounds(&self, j: usize) -> (f64, f64) {
        self.scalar_prior(j).bounds()
    }

    /// Joint log-prior `ln p(θ)`.
    fn log_prior(&self, theta: &[f64]) -> f64;

    fn d_log_prior(&self, j: usize, theta: &[f64]) -> f64;

    /// Row `j` of the Hessian of the log-prior.
    fn hess_row_log_prior(&self, j: usize, theta: &[f64], out: &mut [f64]) {
        fd_row(theta, j, out, |t| self.d_log_prior(j, t));
    }

    /// `ln p(r_n | θ)` for one observation.
    fn log_likelihood_obs(&self, theta: &[f64], n: usize) -> f64;

    /// Subsampled log-likelihood `(N/|Ω|) Σ_{n∈Ω} ln p(r_n|θ)`.
    fn log_likelihood(&self, theta: &[f64], subset: &ObsSubset) -> f64 {
        subset.scale() * subset.iter().map(|n| self.log_likelihood_obs(theta, n)).sum::<f64>()
    }

    /// Gradient of the subsampled log-likelihood.
    fn grad_log_likelihood(&self, theta: &[f64], subset: &ObsSubset, out: &mut [f64]);

    fn d_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.grad_log_likelihood(theta, subset, &mut g);
        g[j]
    }

    /// Row `j` of the Hessian of the subsampled log-likelihood.
    fn hess_row_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        fd_row(theta, j, out, |t| self.d_log_likelihood(j, t, subset));
    }

    /// Partial-evaluation hook: for each candidate `values[n]` of variable `j`
    /// (other coordinates fixed at `theta`), writes the joint log-density and
    /// its derivative with respect to variable `j`. Models that can cache the
    /// contribution of the fixed coordinates override this.
    fn eval_along(
        &self,
        j: usize,
        theta: &[f64],
        values: &[f64],
        subset: &ObsSubset,
        log_joint: &mut [f64],
        d_log_joint: &mut [f64],
    ) {
        let mut t = theta.to_vec();
        for (n, &v) in values.iter().enumerate() {
            t[j] = v;
            log_joint[n] = self.log_prior(&t) + self.log_likelihood(&t, subset);
            d_log_joint[n] = self.d_log_prior(j, &t) + self.d_log_likelihood(j, &t, subset);
        }
    }

    /// Diagonal of the information `−∂²_j ln p(r|θ)` over all observations,
    /// clamped at zero. Used to scale per-variable step sizes.
    fn information_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        let all = ObsSubset::all(self.n_obs());
        let mut row = vec![0.0; self.dim()];
        (0..self.dim())
            .map(|j| {
                self.hess_row_log_likelihood(j, theta, &all, &mut row);
                (-row[j]).max(0.0)
            })
            .collect()
    }

    /// Names used in trace headers.
    fn variable_name(&self, j: usize) -> String {
        format!("theta{j}")
    }
}

/// Models that can redraw their observations from `p(r | θ)`.
pub trait Simulate: Model + Sized {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Self>;
}

/// `ln p(r|θ) + ln p(θ)`.
pub fn log_joint(model: &dyn Model, theta: &[f64], subset: &ObsSubset) -> f64 {
    model.log_prior(theta) + model.log_likelihood(theta, subset)
}

/// Gradient of the joint log-density.
pub fn grad_log_joint(model: &dyn Model, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
    model.grad_log_likelihood(theta, subset, out);
    for (j, o) in out.iter_mut().enumerate() {
        *o += model.d_log_prior(j, theta);
    }
}

/// Row `j` of the Hessian of the joint log-density.
pub fn hess_row_log_joint(model: &dyn Model, j: usize, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
    let mut prior = vec![0.0; out.len()];
    model.hess_row_log_likelihood(j, theta, subset, out);
    model.hess_row_log_prior(j, theta, &mut prior);
    for (o, p) in out.iter_mut().zip(prior) {
        *o += p;
    }
}

/// Adaptive central-difference step.
pub fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

fn fd_row(theta: &[f64], _j: usize, out: &mut [f64], f: impl Fn(&[f64]) -> f64) {
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        let h = fd_step(theta[k]);
        t[k] = theta[k] + h;
        let fp = f(&t);
        t[k] = theta[k] - h;
        let fm = f(&t);
        t[k] = theta[k];
        out[k] = (fp - fm) / (2.0 * h);
    }
}
