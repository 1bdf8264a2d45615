//! RSS-based cooperative localization.
//!
//! The target position `s_0` (and optionally every reference position `s_i`)
//! is flattened into scalar coordinates `[x0, y0, x1, y1, ...]`. With the
//! references fixed they sit at their coarse locations, or are integrated
//! out under a linearized measurement model when `marginalize_references`
//! is set: each RSS then carries the extra variance `κ² σ_i² / ||μ_i − s_0||²`.

use std::f64::consts::{LN_10, PI};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Model, ObsSubset, Simulate};
use crate::error::{Error, Result};
use crate::particles::{BoxPrior, GaussianPrior2, ScalarPrior};
use crate::rng::Rng;

/// `φ_ref − 10 λ log10 ||s_i − s_0||`.
pub fn rss_measurement(s_i: [f64; 2], s_0: [f64; 2], phi_ref: f64, lambda: f64) -> Result<f64> {
    let d = dist(s_i, s_0);
    if d == 0.0 {
        return Err(Error::ZeroDistance);
    }
    Ok(phi_ref - 10.0 * lambda * d.log10())
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Gaussian RSS log-likelihood for references at `refs` with measurements `z`.
pub fn rss_log_likelihood(model: &RssLocalizationModel, s_0: [f64; 2], refs: &[[f64; 2]]) -> Result<f64> {
    let u = model.noise_precision;
    let mut acc = 0.5 * refs.len() as f64 * (u / (2.0 * PI)).ln();
    for (s_i, z) in refs.iter().zip(&model.measurements) {
        let h = rss_measurement(*s_i, s_0, model.phi_ref, model.path_loss_exponent)?;
        acc -= 0.5 * u * (z - h) * (z - h);
    }
    Ok(acc)
}

/// `Σ U_n (z_i − h) (10λ/ln10) (s_i − s_0) / ||s_i − s_0||²`.
pub fn rss_grad_s0(model: &RssLocalizationModel, s_0: [f64; 2], refs: &[[f64; 2]]) -> Result<[f64; 2]> {
    let u = model.noise_precision;
    let kappa = 10.0 * model.path_loss_exponent / LN_10;
    let mut g = [0.0; 2];
    for (s_i, z) in refs.iter().zip(&model.measurements) {
        let h = rss_measurement(*s_i, s_0, model.phi_ref, model.path_loss_exponent)?;
        let d2 = (s_i[0] - s_0[0]).powi(2) + (s_i[1] - s_0[1]).powi(2);
        for k in 0..2 {
            g[k] += u * (z - h) * kappa * (s_i[k] - s_0[k]) / d2;
        }
    }
    Ok(g)
}

/// One reference node of a generated scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RssReference {
    pub truth: [f64; 2],
    pub coarse: [f64; 2],
    pub rss: f64,
}

/// Generated localization instance with embedded truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RssDataset {
    pub target_truth: [f64; 2],
    pub target_coarse: [f64; 2],
    pub references: Vec<RssReference>,
}

/// Localization scenario parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RssScenario {
    pub n_references: usize,
    /// Precision of every coarse location (isotropic), `1/m²`.
    pub prior_precision: f64,
    /// Measurement noise variance, dB².
    pub noise_variance: f64,
    pub phi_ref: f64,
    pub path_loss_exponent: f64,
    pub sensing_range: f64,
    /// Minimum true target-reference distance, m.
    pub min_distance: f64,
    /// Search box half-width in prior standard deviations.
    pub box_sigmas: f64,
    pub estimate_references: bool,
    pub marginalize_references: bool,
}

impl Default for RssScenario {
    fn default() -> Self {
        Self {
            n_references: 6,
            prior_precision: 0.1,
            noise_variance: 4.0 / 75.0,
            phi_ref: -5.0,
            path_loss_exponent: 3.0,
            sensing_range: 50.0,
            min_distance: 5.0,
            box_sigmas: 3.0,
            estimate_references: false,
            marginalize_references: false,
        }
    }
}

impl RssScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_references == 0 {
            return Err(Error::Config("need at least one reference".into()));
        }
        if !(self.prior_precision > 0.0) || !(self.noise_variance > 0.0) {
            return Err(Error::Config("precisions must be positive".into()));
        }
        if !(self.sensing_range > 2.0 * self.min_distance) || !(self.min_distance > 0.0) {
            return Err(Error::Config("invalid sensing geometry".into()));
        }
        if self.estimate_references && self.marginalize_references {
            return Err(Error::Config("references are either estimated or marginalized".into()));
        }
        Ok(())
    }

    /// Draws a geometry: the target at the origin, references uniform in the
    /// annulus `[min_distance, r_s/2]` (so every pair is within `r_s`),
    /// coarse locations perturbed by the prior and RSS per the measurement model.
    pub fn generate(&self, rng: &mut Rng) -> Result<RssDataset> {
        self.validate()?;
        let sigma = 1.0 / self.prior_precision.sqrt();
        let noise_sd = self.noise_variance.sqrt();
        let target_truth = [0.0, 0.0];
        let gauss = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
        let target_coarse = [gauss(rng) * sigma, gauss(rng) * sigma];
        let r_max = 0.5 * self.sensing_range;
        let mut references = Vec::with_capacity(self.n_references);
        while references.len() < self.n_references {
            let u: f64 = rng.random();
            let r = (self.min_distance.powi(2) + u * (r_max.powi(2) - self.min_distance.powi(2))).sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            let truth = [r * a.cos(), r * a.sin()];
            let coarse = [truth[0] + gauss(rng) * sigma, truth[1] + gauss(rng) * sigma];
            if dist(coarse, target_coarse) > self.sensing_range {
                continue;
            }
            let rss =
                rss_measurement(truth, target_truth, self.phi_ref, self.path_loss_exponent)? + noise_sd * gauss(rng);
            references.push(RssReference { truth, coarse, rss });
        }
        Ok(RssDataset {
            target_truth,
            target_coarse,
            references,
        })
    }

    pub fn build(&self, data: &RssDataset) -> Result<RssLocalizationModel> {
        RssLocalizationModel::new(self, data)
    }
}

/// RSS localization model implementing [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct RssLocalizationModel {
    pub phi_ref: f64,
    pub path_loss_exponent: f64,
    pub noise_precision: f64,
    pub sensing_range: f64,
    pub target_prior: GaussianPrior2,
    pub reference_priors: Vec<GaussianPrior2>,
    pub measurements: Vec<f64>,
    pub estimate_references: bool,
    /// Per-reference `κ² σ_i²`; zero keeps the references fixed.
    pub reference_spread: Vec<f64>,
    supports: Vec<BoxPrior>,
}

impl RssLocalizationModel {
    pub fn new(cfg: &RssScenario, data: &RssDataset) -> Result<Self> {
        cfg.validate()?;
        let target_prior = GaussianPrior2::isotropic(data.target_coarse, cfg.prior_precision)?;
        let reference_priors = data
            .references
            .iter()
            .map(|r| GaussianPrior2::isotropic(r.coarse, cfg.prior_precision))
            .collect::<Result<Vec<_>>>()?;
        for p in &reference_priors {
            if dist(p.mean, target_prior.mean) > cfg.sensing_range {
                return Err(Error::Config("reference outside sensing range".into()));
            }
        }
        let half = cfg.box_sigmas / cfg.prior_precision.sqrt();
        let mut supports = Vec::new();
        let mut push = |mean: [f64; 2]| -> Result<()> {
            for m in mean {
                supports.push(BoxPrior::new(m, 2.0 * half)?);
            }
            Ok(())
        };
        push(target_prior.mean)?;
        if cfg.estimate_references {
            for p in &reference_priors {
                push(p.mean)?;
            }
        }
        Ok(Self {
            phi_ref: cfg.phi_ref,
            path_loss_exponent: cfg.path_loss_exponent,
            noise_precision: 1.0 / cfg.noise_variance,
            sensing_range: cfg.sensing_range,
            target_prior,
            reference_priors,
            measurements: data.references.iter().map(|r| r.rss).collect(),
            estimate_references: cfg.estimate_references,
            reference_spread: data
                .references
                .iter()
                .map(|_| {
                    let k = 10.0 * cfg.path_loss_exponent / LN_10;
                    if cfg.marginalize_references {
                        k * k / cfg.prior_precision
                    } else {
                        0.0
                    }
                })
                .collect(),
            supports,
        })
    }

    /// Truth vector in this model's variable layout.
    pub fn truth_vector(&self, data: &RssDataset) -> Vec<f64> {
        let mut v = data.target_truth.to_vec();
        if self.estimate_references {
            for r in &data.references {
                v.extend(r.truth);
            }
        }
        v
    }

    fn target(theta: &[f64]) -> [f64; 2] {
        [theta[0], theta[1]]
    }

    fn reference(&self, theta: &[f64], i: usize) -> [f64; 2] {
        if self.estimate_references {
            [theta[2 + 2 * i], theta[3 + 2 * i]]
        } else {
            self.reference_priors[i].mean
        }
    }

    fn prior_for(&self, j: usize) -> &GaussianPrior2 {
        if j < 2 {
            &self.target_prior
        } else {
            &self.reference_priors[(j - 2) / 2]
        }
    }

    fn kappa(&self) -> f64 {
        10.0 * self.path_loss_exponent / LN_10
    }

    /// Residual, measurement gradient `∂h/∂s_0` and Hessian of `h` w.r.t. `s_0`.
    fn obs_terms(&self, theta: &[f64], i: usize) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let s0 = Self::target(theta);
        let si = self.reference(theta, i);
        let v = [si[0] - s0[0], si[1] - s0[1]];
        let d2 = v[0] * v[0] + v[1] * v[1];
        let h = self.phi_ref - 5.0 * self.path_loss_exponent * d2.log10();
        let k = self.kappa();
        let g = [k * v[0] / d2, k * v[1] / d2];
        let mut hh = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let delta = if a == b { 1.0 } else { 0.0 };
                hh[a][b] = k * (-delta / d2 + 2.0 * v[a] * v[b] / (d2 * d2));
            }
        }
        (self.measurements[i] - h, g, hh)
    }

    fn marginal(&self) -> bool {
        !self.estimate_references && self.reference_spread.iter().any(|c| *c > 0.0)
    }

    /// Variance of observation `i` at squared distance `q`.
    fn obs_variance(&self, i: usize, q: f64) -> f64 {
        self.noise_precision.recip() + self.reference_spread[i] / q
    }

    /// Marginal log-density of observation `i` as a function of the squared
    /// distance `q`: value, `d/dq`, `d²/dq²`, and `s_i − s_0`.
    fn marginal_terms(&self, theta: &[f64], i: usize) -> (f64, f64, f64, [f64; 2]) {
        let s0 = Self::target(theta);
        let si = self.reference_priors[i].mean;
        let v = [si[0] - s0[0], si[1] - s0[1]];
        let q = v[0] * v[0] + v[1] * v[1];
        let (k, c) = (self.kappa(), self.reference_spread[i]);
        let r = self.measurements[i] - self.phi_ref + 0.5 * k * q.ln();
        let (r1, r2) = (0.5 * k / q, -0.5 * k / (q * q));
        let a = self.obs_variance(i, q);
        let (a1, a2) = (-c / (q * q), 2.0 * c / (q * q * q));
        let f = -0.5 * (2.0 * PI * a).ln() - 0.5 * r * r / a;
        let f1 = -0.5 * a1 / a - r * r1 / a + 0.5 * r * r * a1 / (a * a);
        let f2 = -0.5 * a2 / a + 0.5 * a1 * a1 / (a * a) - (r1 * r1 + r * r2) / a
            + r * r1 * a1 / (a * a)
            + (2.0 * r * r1 * a1 + r * r * a2) / (2.0 * a * a)
            - r * r * a1 * a1 / (a * a * a);
        (f, f1, f2, v)
    }
}

impl Simulate for RssLocalizationModel {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Self> {
        let s0 = Self::target(theta);
        let mut out = self.clone();
        for i in 0..self.measurements.len() {
            let si = self.reference(theta, i);
            let q = (si[0] - s0[0]).powi(2) + (si[1] - s0[1]).powi(2);
            let sd = if self.marginal() {
                self.obs_variance(i, q).sqrt()
            } else {
                self.noise_precision.sqrt().recip()
            };
            let z: f64 = StandardNormal.sample(rng);
            out.measurements[i] = rss_measurement(si, s0, self.phi_ref, self.path_loss_exponent)? + sd * z;
        }
        Ok(out)
    }
}

impl Model for RssLocalizationModel {
    fn dim(&self) -> usize {
        self.supports.len()
    }

    fn n_obs(&self) -> usize {
        self.measurements.len()
    }

    fn scalar_prior(&self, j: usize) -> ScalarPrior {
        ScalarPrior::Gaussian {
            prior: self.prior_for(j).marginal(j % 2),
            support: self.supports[j],
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut acc = self.target_prior.log_density(Self::target(theta));
        if self.estimate_references {
            for (i, p) in self.reference_priors.iter().enumerate() {
                acc += p.log_density(self.reference(theta, i));
            }
        }
        acc
    }

    fn d_log_prior(&self, j: usize, theta: &[f64]) -> f64 {
        let base = j - j % 2;
        self.prior_for(j).grad_log_density([theta[base], theta[base + 1]])[j % 2]
    }

    fn hess_row_log_prior(&self, j: usize, _theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let base = j - j % 2;
        let u = self.prior_for(j).precision;
        out[base] = -u[j % 2][0];
        out[base + 1] = -u[j % 2][1];
    }

    fn log_likelihood_obs(&self, theta: &[f64], n: usize) -> f64 {
        if self.marginal() {
            return self.marginal_terms(theta, n).0;
        }
        let (res, _, _) = self.obs_terms(theta, n);
        0.5 * (self.noise_precision / (2.0 * PI)).ln() - 0.5 * self.noise_precision * res * res
    }

    fn grad_log_likelihood(&self, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.marginal() {
            for i in subset.iter() {
                let (_, f1, _, v) = self.marginal_terms(theta, i);
                for k in 0..2 {
                    out[k] -= 2.0 * subset.scale() * f1 * v[k];
                }
            }
            return;
        }
        let u = self.noise_precision * subset.scale();
        for i in subset.iter() {
            let (res, g, _) = self.obs_terms(theta, i);
            for k in 0..2 {
                out[k] += u * res * g[k];
                if self.estimate_references {
                    out[2 + 2 * i + k] -= u * res * g[k];
                }
            }
        }
    }

    fn d_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset) -> f64 {
        let u = self.noise_precision * subset.scale();
        let k = j % 2;
        if self.marginal() {
            return subset
                .iter()
                .map(|i| {
                    let (_, f1, _, v) = self.marginal_terms(theta, i);
                    -2.0 * subset.scale() * f1 * v[k]
                })
                .sum();
        }
        if j < 2 {
            subset
                .iter()
                .map(|i| {
                    let (res, g, _) = self.obs_terms(theta, i);
                    u * res * g[k]
                })
                .sum()
        } else {
            let i = (j - 2) / 2;
            if subset.iter().any(|n| n == i) {
                let (res, g, _) = self.obs_terms(theta, i);
                -u * res * g[k]
            } else {
                0.0
            }
        }
    }

    // ln p_i = c − U/2 (z − h)²  ⇒  ∂² = −U ∂h ∂hᵀ + U (z − h) ∂²h, with
    // ∂h/∂s_i = −∂h/∂s_0 and ∂²h/∂s_i² = −∂²h/∂s_0∂s_i = ∂²h/∂s_0².
    fn hess_row_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let u = self.noise_precision * subset.scale();
        let a = j % 2;
        if self.marginal() {
            // ∂² f(q) = 4 f'' v vᵀ + 2 f' I
            for i in subset.iter() {
                let (_, f1, f2, v) = self.marginal_terms(theta, i);
                for b in 0..2 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    out[b] += subset.scale() * (4.0 * f2 * v[a] * v[b] + 2.0 * f1 * delta);
                }
            }
            return;
        }
        let owner = if j < 2 { None } else { Some((j - 2) / 2) };
        for i in subset.iter() {
            if let Some(o) = owner {
                if o != i {
                    continue;
                }
            }
            let (res, g, hh) = self.obs_terms(theta, i);
            let sign_j = if owner.is_some() { -1.0 } else { 1.0 };
            for b in 0..2 {
                let val = u * (-(g[a] * g[b]) + res * hh[a][b]);
                // column in s_0
                out[b] += sign_j * val;
                if self.estimate_references {
                    out[2 + 2 * i + b] += -sign_j * val;
                }
            }
        }
    }

    fn variable_name(&self, j: usize) -> String {
        let axis = if j % 2 == 0 { "x" } else { "y" };
        format!("{axis}{}", j / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn measurement_closed_form() {
        assert_abs_diff_eq!(rss_measurement([1.0, 0.0], [0.0, 0.0], -5.0, 3.0).unwrap(), -5.0);
        assert_abs_diff_eq!(
            rss_measurement([3.0, 4.0], [0.0, 0.0], -5.0, 3.0).unwrap(),
            -25.969_100_130_080_56,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            rss_measurement([10.0, 0.0], [0.0, 0.0], -5.0, 3.0).unwrap(),
            -35.0,
            epsilon = 1e-12
        );
        assert_eq!(
            rss_measurement([1.0, 1.0], [1.0, 1.0], -5.0, 3.0),
            Err(Error::ZeroDistance)
        );
    }

    fn instance(estimate_references: bool, seed: u64) -> (RssScenario, RssDataset, RssLocalizationModel) {
        scenario_instance(
            RssScenario {
                estimate_references,
                ..RssScenario::default()
            },
            seed,
        )
    }

    fn scenario_instance(cfg: RssScenario, seed: u64) -> (RssScenario, RssDataset, RssLocalizationModel) {
        let data = cfg.generate(&mut stream(seed, &[])).unwrap();
        let model = cfg.build(&data).unwrap();
        (cfg, data, model)
    }

    #[test]
    fn exact_measurements_give_zero_gradient() {
        let (_, data, mut model) = instance(false, 5);
        let s0 = [1.0, -2.0];
        let refs: Vec<[f64; 2]> = data.references.iter().map(|r| r.coarse).collect();
        model.measurements = refs
            .iter()
            .map(|r| rss_measurement(*r, s0, -5.0, 3.0).unwrap())
            .collect();
        let g = rss_grad_s0(&model, s0, &refs).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-12);
        let mut full = vec![0.0; 2];
        model.grad_log_likelihood(&s0, &ObsSubset::all(refs.len()), &mut full);
        assert_abs_diff_eq!(full[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_reference_ring_is_the_maximizer() {
        let (_, data, mut model) = instance(false, 6);
        let r1 = data.references[0].coarse;
        model.measurements.truncate(1);
        model.reference_priors.truncate(1);
        model.measurements[0] = -20.0;
        let radius = 10f64.powf((-5.0 - -20.0) / 30.0);
        // brute-force grid: the maximizing distance sits on the ring
        let mut best = (f64::NEG_INFINITY, 0.0);
        for a in 0..64 {
            for k in 1..400 {
                let r = k as f64 * 0.01;
                let ang = a as f64 * PI / 32.0;
                let s0 = [r1[0] + r * ang.cos(), r1[1] + r * ang.sin()];
                let ll = rss_log_likelihood(&model, s0, &[r1]).unwrap();
                if ll > best.0 {
                    best = (ll, r);
                }
            }
        }
        assert!((best.1 - radius).abs() < 0.011, "{} vs {}", best.1, radius);
        let s0 = [r1[0] + radius * 0.6, r1[1] + radius * 0.8];
        let g = rss_grad_s0(&model, s0, &[r1]).unwrap();
        assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9);
    }

    #[test]
    fn standalone_and_trait_agree() {
        let (_, data, model) = instance(false, 8);
        let refs: Vec<[f64; 2]> = data.references.iter().map(|r| r.coarse).collect();
        let s0 = [0.5, 0.25];
        let a = rss_log_likelihood(&model, s0, &refs).unwrap();
        let b = model.log_likelihood(&s0, &ObsSubset::all(refs.len()));
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        let g = rss_grad_s0(&model, s0, &refs).unwrap();
        let mut gg = vec![0.0; 2];
        model.grad_log_likelihood(&s0, &ObsSubset::all(refs.len()), &mut gg);
        assert_abs_diff_eq!(g[0], gg[0], epsilon = 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for estimate in [false, true] {
            let (_, data, model) = instance(estimate, 11);
            let mut rng = stream(12, &[]);
            for _ in 0..10 {
                let theta: Vec<f64> = (0..model.dim()).map(|j| model.scalar_prior(j).draw(&mut rng)).collect();
                let _ = &data;
                check_derivatives(&model, &theta, &ObsSubset::all(model.n_obs()), 1e-5);
                let sub = ObsSubset::from_indices(model.n_obs(), vec![0, 2, 3]).unwrap();
                check_derivatives(&model, &theta, &sub, 1e-5);
            }
        }
    }

    #[test]
    fn marginal_derivatives_match_finite_differences() {
        let cfg = RssScenario {
            marginalize_references: true,
            ..RssScenario::default()
        };
        let (_, _, model) = scenario_instance(cfg, 13);
        let mut rng = stream(14, &[]);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..2).map(|j| model.scalar_prior(j).draw(&mut rng)).collect();
            check_derivatives(&model, &theta, &ObsSubset::all(model.n_obs()), 1e-5);
            let sub = ObsSubset::from_indices(model.n_obs(), vec![1, 4]).unwrap();
            check_derivatives(&model, &theta, &sub, 1e-5);
        }
    }

    #[test]
    fn marginal_inflates_the_variance_by_the_reference_spread() {
        let cfg = RssScenario {
            marginalize_references: true,
            ..RssScenario::default()
        };
        let (_, data, model) = scenario_instance(cfg.clone(), 15);
        let (_, _, fixed) = scenario_instance(RssScenario::default(), 15);
        let s0 = [0.3, -0.4];
        let mu = data.references[0].coarse;
        let q = (mu[0] - s0[0]).powi(2) + (mu[1] - s0[1]).powi(2);
        let k = 30.0 / LN_10;
        let var = cfg.noise_variance + k * k / (cfg.prior_precision * q);
        let z = model.measurements[0];
        let h = rss_measurement(mu, s0, cfg.phi_ref, cfg.path_loss_exponent).unwrap();
        let expect = -0.5 * (2.0 * PI * var).ln() - 0.5 * (z - h).powi(2) / var;
        assert_abs_diff_eq!(model.log_likelihood_obs(&s0, 0), expect, epsilon = 1e-10);
        assert!(fixed.log_likelihood_obs(&s0, 0) != model.log_likelihood_obs(&s0, 0));
        assert!(RssScenario {
            estimate_references: true,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn generated_geometry_respects_sensing_range() {
        let cfg = RssScenario::default();
        for seed in 0..50 {
            let data = cfg.generate(&mut stream(seed, &[])).unwrap();
            assert_eq!(data.references.len(), 6);
            for a in &data.references {
                for b in &data.references {
                    assert!(dist(a.truth, b.truth) <= cfg.sensing_range);
                }
                assert!(dist(a.coarse, data.target_coarse) <= cfg.sensing_range);
            }
        }
    }
}
