//! Multiband OFDM delay sensing.
//!
//! Variable layout `[α_1..α_K, τ_1..τ_K, β_1..β_K, φ_1..φ_M, δ_1..δ_M]`,
//! delays in nanoseconds, frequencies in Hz. Observation `m·N_m + n` is
//! subcarrier `n` of band `m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Model, ObsSubset, Simulate};
use crate::error::{Error, Result};
use crate::particles::{BoxPrior, GaussianPrior, ScalarPrior};
use crate::rng::Rng;

const NS: f64 = 1e-9;

/// Role of one scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MultibandVar {
    Amplitude(usize),
    Delay(usize),
    PathPhase(usize),
    BandPhase(usize),
    SyncError(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultibandModel {
    pub band_start: Vec<f64>,
    pub spacing: Vec<f64>,
    pub subcarriers: usize,
    pub paths: usize,
    pub noise_var: f64,
    pub observations: Vec<Complex64>,
    pub priors: Vec<ScalarPrior>,
}

impl MultibandModel {
    pub fn new(
        band_start: Vec<f64>,
        spacing: Vec<f64>,
        subcarriers: usize,
        paths: usize,
        noise_var: f64,
        observations: Vec<Complex64>,
        priors: Vec<ScalarPrior>,
    ) -> Result<Self> {
        let m = band_start.len();
        if m == 0 || spacing.len() != m || subcarriers == 0 || paths == 0 {
            return Err(Error::Config("invalid band layout".into()));
        }
        if observations.len() != m * subcarriers {
            return Err(Error::Config(format!(
                "expected {} observations, got {}",
                m * subcarriers,
                observations.len()
            )));
        }
        if priors.len() != 3 * paths + 2 * m {
            return Err(Error::Config("one prior per variable required".into()));
        }
        if !(noise_var > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
        Ok(Self {
            band_start,
            spacing,
            subcarriers,
            paths,
            noise_var,
            observations,
            priors,
        })
    }

    pub fn bands(&self) -> usize {
        self.band_start.len()
    }

    pub fn var(&self, j: usize) -> MultibandVar {
        let k = self.paths;
        let m = self.bands();
        match j {
            _ if j < k => MultibandVar::Amplitude(j),
            _ if j < 2 * k => MultibandVar::Delay(j - k),
            _ if j < 3 * k => MultibandVar::PathPhase(j - 2 * k),
            _ if j < 3 * k + m => MultibandVar::BandPhase(j - 3 * k),
            _ => MultibandVar::SyncError(j - 3 * k - m),
        }
    }

    pub fn delay_index(&self, k: usize) -> usize {
        self.paths + k
    }

    fn band_of(&self, o: usize) -> (usize, usize) {
        (o / self.subcarriers, o % self.subcarriers)
    }

    fn freq(&self, m: usize, n: usize) -> f64 {
        self.band_start[m] + n as f64 * self.spacing[m]
    }

    /// `e^{jφ_m} Σ_k α_k e^{jβ_k} e^{−j2π f (τ_k + δ_m)}` at subcarrier `n` of band `m`.
    pub fn reconstruct(&self, theta: &[f64], m: usize, n: usize) -> Result<Complex64> {
        if m >= self.bands() {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: self.bands(),
            });
        }
        if n >= self.subcarriers {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.subcarriers,
            });
        }
        Ok(self.path_terms(theta, m, n).iter().sum())
    }

    /// Per-path terms `t_k` at one subcarrier.
    fn path_terms(&self, theta: &[f64], m: usize, n: usize) -> Vec<Complex64> {
        let k = self.paths;
        let f = self.freq(m, n) * NS;
        let phi = theta[3 * k + m];
        let delta = theta[3 * k + self.bands() + m];
        (0..k)
            .map(|p| {
                let ph = theta[2 * k + p] + phi - 2.0 * PI * f * wrap_cycles(f, theta[k + p] + delta);
                Complex64::from_polar(theta[p], ph)
            })
            .collect()
    }

    fn log_norm(&self) -> f64 {
        -(2.0 * PI).sqrt().ln() - 0.5 * self.noise_var.ln()
    }

    /// Multiplicative derivative factor of variable `v` on a path term, or
    /// `None` when the term does not depend on it. Amplitudes are handled
    /// separately since `∂t/∂α = e^{jψ}`.
    fn factor(&self, v: MultibandVar, path: usize, band: usize, f_ns: f64) -> Option<Complex64> {
        let i = Complex64::i();
        match v {
            MultibandVar::PathPhase(p) if p == path => Some(i),
            MultibandVar::Delay(p) if p == path => Some(-i * 2.0 * PI * f_ns),
            MultibandVar::BandPhase(m) if m == band => Some(i),
            MultibandVar::SyncError(m) if m == band => Some(-i * 2.0 * PI * f_ns),
            _ => None,
        }
    }

    fn d_term(&self, v: MultibandVar, t: Complex64, alpha: f64, path: usize, band: usize, f_ns: f64) -> Complex64 {
        match v {
            MultibandVar::Amplitude(p) if p == path => unit(t, alpha),
            _ => self
                .factor(v, path, band, f_ns)
                .map_or(Complex64::new(0.0, 0.0), |c| c * t),
        }
    }

    fn d2_term(
        &self,
        u: MultibandVar,
        v: MultibandVar,
        t: Complex64,
        alpha: f64,
        path: usize,
        band: usize,
        f_ns: f64,
    ) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        let amp_u = matches!(u, MultibandVar::Amplitude(p) if p == path);
        let amp_v = matches!(v, MultibandVar::Amplitude(p) if p == path);
        match (amp_u, amp_v) {
            (true, true) => zero,
            (true, false) => self.factor(v, path, band, f_ns).map_or(zero, |c| c * unit(t, alpha)),
            (false, true) => self.factor(u, path, band, f_ns).map_or(zero, |c| c * unit(t, alpha)),
            (false, false) => match (self.factor(u, path, band, f_ns), self.factor(v, path, band, f_ns)) {
                (Some(a), Some(b)) => a * b * t,
                _ => zero,
            },
        }
    }
}

// t / α without dividing by a vanishing amplitude.
fn unit(t: Complex64, alpha: f64) -> Complex64 {
    if alpha != 0.0 {
        t / alpha
    } else {
        Complex64::new(0.0, 0.0)
    }
}

// Delay-frequency products reach ~10³ cycles; subtract whole cycles before
// scaling by 2π so phases keep full f64 precision. Returns τ with the
// integer-cycle part removed, in the same units.
#[inline]
fn wrap_cycles(f_ns: f64, tau: f64) -> f64 {
    let cycles = f_ns * tau;
    (cycles - cycles.floor()) / f_ns
}

impl Model for MultibandModel {
    fn dim(&self) -> usize {
        3 * self.paths + 2 * self.bands()
    }

    fn n_obs(&self) -> usize {
        self.observations.len()
    }

    fn scalar_prior(&self, j: usize) -> ScalarPrior {
        self.priors[j]
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.priors.iter().zip(theta).map(|(p, &x)| p.log_density(x)).sum()
    }

    fn d_log_prior(&self, j: usize, theta: &[f64]) -> f64 {
        self.priors[j].d_log_density(theta[j])
    }

    fn hess_row_log_prior(&self, j: usize, _theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[j] = self.priors[j].d2_log_density();
    }

    fn log_likelihood_obs(&self, theta: &[f64], o: usize) -> f64 {
        let (m, n) = self.band_of(o);
        let s: Complex64 = self.path_terms(theta, m, n).iter().sum();
        self.log_norm() - (self.observations[o] - s).norm_sqr() / (2.0 * self.noise_var)
    }

    fn grad_log_likelihood(&self, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let scale = subset.scale() / self.noise_var;
        let vars: Vec<MultibandVar> = (0..self.dim()).map(|j| self.var(j)).collect();
        for o in subset.iter() {
            let (m, n) = self.band_of(o);
            let f_ns = self.freq(m, n) * NS;
            let terms = self.path_terms(theta, m, n);
            let e = self.observations[o] - terms.iter().sum::<Complex64>();
            for (j, &v) in vars.iter().enumerate() {
                let ds: Complex64 = terms
                    .iter()
                    .enumerate()
                    .map(|(p, &t)| self.d_term(v, t, theta[p], p, m, f_ns))
                    .sum();
                out[j] += scale * (e.conj() * ds).re;
            }
        }
    }

    // ∂²/∂u∂v = Re(ē ∂²s − conj(∂_v s) ∂_u s) / η².
    fn hess_row_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let scale = subset.scale() / self.noise_var;
        let u = self.var(j);
        let vars: Vec<MultibandVar> = (0..self.dim()).map(|k| self.var(k)).collect();
        for o in subset.iter() {
            let (m, n) = self.band_of(o);
            let f_ns = self.freq(m, n) * NS;
            let terms = self.path_terms(theta, m, n);
            let e = self.observations[o] - terms.iter().sum::<Complex64>();
            let du: Complex64 = terms
                .iter()
                .enumerate()
                .map(|(p, &t)| self.d_term(u, t, theta[p], p, m, f_ns))
                .sum();
            for (k, &v) in vars.iter().enumerate() {
                let mut dv = Complex64::new(0.0, 0.0);
                let mut duv = Complex64::new(0.0, 0.0);
                for (p, &t) in terms.iter().enumerate() {
                    dv += self.d_term(v, t, theta[p], p, m, f_ns);
                    duv += self.d2_term(u, v, t, theta[p], p, m, f_ns);
                }
                out[k] += scale * ((e.conj() * duv).re - (dv.conj() * du).re);
            }
        }
    }

    fn eval_along(
        &self,
        j: usize,
        theta: &[f64],
        values: &[f64],
        subset: &ObsSubset,
        log_joint: &mut [f64],
        d_log_joint: &mut [f64],
    ) {
        let kp = self.paths;
        let mb = self.bands();
        let var = self.var(j);
        let inv2 = 1.0 / (2.0 * self.noise_var);
        let scale = subset.scale();
        let prior_rest: f64 = self
            .priors
            .iter()
            .zip(theta)
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, (p, &x))| p.log_density(x))
            .sum();
        let mut ll = vec![0.0; values.len()];
        let mut dll = vec![0.0; values.len()];
        let mut constant = 0.0;
        for o in subset.iter() {
            let (m, n) = self.band_of(o);
            let f_ns = self.freq(m, n) * NS;
            let r = self.observations[o];
            let phi = theta[3 * kp + m];
            let delta = theta[3 * kp + mb + m];
            match var {
                MultibandVar::Amplitude(p) | MultibandVar::Delay(p) | MultibandVar::PathPhase(p) => {
                    let terms = self.path_terms(theta, m, n);
                    let rest: Complex64 = terms.iter().enumerate().filter(|(q, _)| *q != p).map(|(_, t)| t).sum();
                    let (alpha, tau, beta) = (theta[p], theta[kp + p], theta[2 * kp + p]);
                    for (idx, &x) in values.iter().enumerate() {
                        let (a, t_, b) = match var {
                            MultibandVar::Amplitude(_) => (x, tau, beta),
                            MultibandVar::Delay(_) => (alpha, x, beta),
                            _ => (alpha, tau, x),
                        };
                        let ph = b + phi - 2.0 * PI * f_ns * wrap_cycles(f_ns, t_ + delta);
                        let unit_term = Complex64::from_polar(1.0, ph);
                        let t = unit_term * a;
                        let e = r - rest - t;
                        let ds = match var {
                            MultibandVar::Amplitude(_) => unit_term,
                            MultibandVar::Delay(_) => -Complex64::i() * 2.0 * PI * f_ns * t,
                            _ => Complex64::i() * t,
                        };
                        ll[idx] -= e.norm_sqr() * inv2;
                        dll[idx] += (e.conj() * ds).re / self.noise_var;
                    }
                }
                MultibandVar::BandPhase(b) | MultibandVar::SyncError(b) => {
                    if b != m {
                        let s: Complex64 = self.path_terms(theta, m, n).iter().sum();
                        constant -= (r - s).norm_sqr() * inv2;
                        continue;
                    }
                    // s = e^{jφ} e^{−j2πfδ} Σ_k α_k e^{jβ_k} e^{−j2πf τ_k}
                    let core: Complex64 = (0..kp)
                        .map(|p| {
                            Complex64::from_polar(
                                theta[p],
                                theta[2 * kp + p] - 2.0 * PI * f_ns * wrap_cycles(f_ns, theta[kp + p]),
                            )
                        })
                        .sum();
                    for (idx, &x) in values.iter().enumerate() {
                        let (ph, dl) = match var {
                            MultibandVar::BandPhase(_) => (x, delta),
                            _ => (phi, x),
                        };
                        let rot = Complex64::from_polar(1.0, ph - 2.0 * PI * f_ns * wrap_cycles(f_ns, dl));
                        let s = core * rot;
                        let e = r - s;
                        let ds = match var {
                            MultibandVar::BandPhase(_) => Complex64::i() * s,
                            _ => -Complex64::i() * 2.0 * PI * f_ns * s,
                        };
                        ll[idx] -= e.norm_sqr() * inv2;
                        dll[idx] += (e.conj() * ds).re / self.noise_var;
                    }
                }
            }
        }
        let norm = self.log_norm() * subset.len() as f64;
        for (idx, &x) in values.iter().enumerate() {
            let p = &self.priors[j];
            log_joint[idx] = prior_rest + p.log_density(x) + scale * (norm + constant + ll[idx]);
            d_log_joint[idx] = p.d_log_density(x) + scale * dll[idx];
        }
    }

    // expected (Gauss-Newton) information Σ|∂s/∂θ_j|²/η²
    fn information_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        let vars: Vec<MultibandVar> = (0..self.dim()).map(|j| self.var(j)).collect();
        let mut out = vec![0.0; self.dim()];
        for o in 0..self.n_obs() {
            let (m, n) = self.band_of(o);
            let f_ns = self.freq(m, n) * NS;
            let terms = self.path_terms(theta, m, n);
            for (j, &v) in vars.iter().enumerate() {
                let ds: Complex64 = terms
                    .iter()
                    .enumerate()
                    .map(|(p, &t)| self.d_term(v, t, theta[p], p, m, f_ns))
                    .sum();
                out[j] += ds.norm_sqr() / self.noise_var;
            }
        }
        out
    }

    fn variable_name(&self, j: usize) -> String {
        match self.var(j) {
            MultibandVar::Amplitude(k) => format!("alpha{}", k + 1),
            MultibandVar::Delay(k) => format!("tau{}", k + 1),
            MultibandVar::PathPhase(k) => format!("beta{}", k + 1),
            MultibandVar::BandPhase(m) => format!("phi{}", m + 1),
            MultibandVar::SyncError(m) => format!("delta{}", m + 1),
        }
    }
}

impl Simulate for MultibandModel {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Self> {
        let eta = self.noise_var.sqrt();
        let mut out = self.clone();
        for o in 0..self.observations.len() {
            let (m, n) = self.band_of(o);
            let s = self.reconstruct(theta, m, n)?;
            let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            out.observations[o] = s + Complex64::new(eta * a, eta * b);
        }
        Ok(out)
    }
}

/// Multiband sensing scenario. Prior boxes emulate a coarse leading
/// estimator: each box is centered on the truth plus a Gaussian offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultibandScenario {
    pub band_start_hz: Vec<f64>,
    pub spacing_hz: f64,
    pub subcarriers: usize,
    pub amplitudes: Vec<f64>,
    pub path_phases: Vec<f64>,
    pub delay_range_ns: [f64; 2],
    pub sync_error_sd_ns: f64,
    pub snr_db: f64,
    pub amplitude_box: f64,
    pub delay_box_ns: f64,
    pub phase_box: f64,
    pub sync_box_sigmas: f64,
    pub coarse_amplitude_sd: f64,
    pub coarse_delay_sd_ns: f64,
    pub coarse_phase_sd: f64,
    /// When set, the coarse delay error and the delay box scale with the
    /// noise amplitude, `10^{−(snr − ref)/20}`, as a leading estimator's
    /// accuracy does; the stated values apply at the reference SNR.
    pub leading_reference_snr_db: Option<f64>,
}

impl Default for MultibandScenario {
    fn default() -> Self {
        Self {
            band_start_hz: vec![2.4e9, 2.46e9],
            spacing_hz: 78.125e3,
            subcarriers: 256,
            amplitudes: vec![1.0, 0.5],
            path_phases: vec![-PI / 4.0, PI / 4.0],
            delay_range_ns: [20.0, 200.0],
            sync_error_sd_ns: 0.1,
            snr_db: 15.0,
            amplitude_box: 0.6,
            delay_box_ns: 0.6,
            phase_box: PI / 2.0,
            sync_box_sigmas: 4.0,
            coarse_amplitude_sd: 0.05,
            coarse_delay_sd_ns: 0.1,
            coarse_phase_sd: 0.15,
            leading_reference_snr_db: Some(15.0),
        }
    }
}

/// Generated multiband instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MultibandDraw {
    pub truth: Vec<f64>,
    pub model: MultibandModel,
    /// Noise-free reconstruction, one entry per observation.
    pub clean: Vec<Complex64>,
}

impl MultibandScenario {
    pub fn paths(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_start_hz.is_empty() || self.subcarriers == 0 || self.amplitudes.is_empty() {
            return Err(Error::Config("empty band or path layout".into()));
        }
        if self.path_phases.len() != self.amplitudes.len() {
            return Err(Error::Config("one phase per path required".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("invalid SNR {}", self.snr_db)));
        }
        if !(self.delay_range_ns[1] > self.delay_range_ns[0] && self.delay_range_ns[0] >= 0.0) {
            return Err(Error::Config("invalid delay range".into()));
        }
        if self.amplitudes.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config("amplitudes must be positive".into()));
        }
        Ok(())
    }

    /// Draws truth, priors and observations at `snr_db`. With
    /// `noiseless = true` the observations equal the reconstruction.
    pub fn generate(&self, rng: &mut Rng, noiseless: bool) -> Result<MultibandDraw> {
        self.validate()?;
        let kp = self.paths();
        let mb = self.band_start_hz.len();
        let gauss = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
        let mut truth = Vec::with_capacity(3 * kp + 2 * mb);
        truth.extend(&self.amplitudes);
        for _ in 0..kp {
            truth.push(rng.random_range(self.delay_range_ns[0]..self.delay_range_ns[1]));
        }
        truth.extend(&self.path_phases);
        for _ in 0..mb {
            truth.push(rng.random_range(0.0..2.0 * PI));
        }
        for _ in 0..mb {
            truth.push(self.sync_error_sd_ns * gauss(rng));
        }

        let accuracy = self
            .leading_reference_snr_db
            .map_or(1.0, |r| 10f64.powf(-(self.snr_db - r) / 20.0));
        let mut priors = Vec::with_capacity(truth.len());
        for (j, &t) in truth.iter().enumerate() {
            let prior = if j < kp {
                let c = (t + self.coarse_amplitude_sd * gauss(rng)).max(0.5 * self.amplitude_box + 1e-3);
                ScalarPrior::Box(BoxPrior::new(c, self.amplitude_box)?)
            } else if j < 2 * kp {
                let c = t + accuracy * self.coarse_delay_sd_ns * gauss(rng);
                ScalarPrior::Box(BoxPrior::new(c, accuracy * self.delay_box_ns)?)
            } else if j < 3 * kp + mb {
                let c = t + self.coarse_phase_sd * gauss(rng);
                ScalarPrior::Box(BoxPrior::new(c, self.phase_box)?)
            } else {
                let prec = 1.0 / (self.sync_error_sd_ns * self.sync_error_sd_ns);
                ScalarPrior::Gaussian {
                    prior: GaussianPrior::new(0.0, prec)?,
                    support: BoxPrior::new(0.0, 2.0 * self.sync_box_sigmas * self.sync_error_sd_ns)?,
                }
            };
            priors.push(prior);
        }

        let spacing = vec![self.spacing_hz; mb];
        let placeholder = vec![Complex64::new(0.0, 0.0); mb * self.subcarriers];
        let mut model = MultibandModel::new(
            self.band_start_hz.clone(),
            spacing,
            self.subcarriers,
            kp,
            1.0,
            placeholder,
            priors,
        )?;
        let clean: Vec<Complex64> = (0..mb * self.subcarriers)
            .map(|o| model.reconstruct(&truth, o / self.subcarriers, o % self.subcarriers))
            .collect::<Result<_>>()?;
        let power = clean.iter().map(|s| s.norm_sqr()).sum::<f64>() / clean.len() as f64;
        // real and imaginary noise parts each have variance η², so E|w|² = 2η²
        let eta2 = power / (2.0 * 10f64.powf(self.snr_db / 10.0));
        let eta = eta2.sqrt();
        model.noise_var = eta2;
        model.observations = clean
            .iter()
            .map(|&s| {
                if noiseless {
                    s
                } else {
                    s + Complex64::new(eta * gauss(rng), eta * gauss(rng))
                }
            })
            .collect();
        Ok(MultibandDraw { truth, model, clean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;
    use crate::models::{grad_log_joint, log_joint};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn single_path(phi: f64) -> (MultibandModel, Vec<f64>) {
        let priors = vec![ScalarPrior::Box(BoxPrior::new(0.0, 10.0).unwrap()); 5];
        let model = MultibandModel::new(
            vec![2.4e9],
            vec![78.125e3],
            4,
            1,
            1.0,
            vec![Complex64::new(0.0, 0.0); 4],
            priors,
        )
        .unwrap();
        (model, vec![1.0, 0.0, 0.0, phi, 0.0])
    }

    #[test]
    fn information_matches_noiseless_hessian() {
        let d = MultibandScenario {
            subcarriers: 16,
            ..MultibandScenario::default()
        }
        .generate(&mut stream(4, &[]), true)
        .unwrap();
        let info = d.model.information_diagonal(&d.truth);
        let all = ObsSubset::all(d.model.n_obs());
        let mut row = vec![0.0; d.model.dim()];
        for (j, i) in info.iter().enumerate() {
            d.model.hess_row_log_likelihood(j, &d.truth, &all, &mut row);
            assert!((i + row[j]).abs() <= 1e-9 * i.abs(), "{j}: {i} vs {}", -row[j]);
        }
    }

    #[test]
    fn delay_box_scales_with_snr() {
        let width = |snr: f64| {
            let d = MultibandScenario {
                snr_db: snr,
                ..MultibandScenario::default()
            }
            .generate(&mut stream(2, &[]), false)
            .unwrap();
            let (lo, hi) = d.model.bounds(d.model.delay_index(0));
            hi - lo
        };
        assert!((width(15.0) - 0.6).abs() < 1e-9);
        assert!((width(35.0) - 0.06).abs() < 1e-9);
    }

    #[test]
    fn reconstruct_trivial_phases() {
        let (m, theta) = single_path(0.0);
        for n in 0..4 {
            let s = m.reconstruct(&theta, 0, n).unwrap();
            assert_abs_diff_eq!(s.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(s.im, 0.0, epsilon = 1e-15);
        }
        let (m, theta) = single_path(PI);
        let s = m.reconstruct(&theta, 0, 2).unwrap();
        assert_abs_diff_eq!(s.re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.im, 0.0, epsilon = 1e-15);
        assert!(m.reconstruct(&theta, 1, 0).is_err());
        assert!(m.reconstruct(&theta, 0, 4).is_err());
    }

    #[test]
    fn reconstruct_two_path_regression() {
        let sc = MultibandScenario::default();
        let priors = vec![ScalarPrior::Box(BoxPrior::new(0.0, 10.0).unwrap()); 10];
        let m = MultibandModel::new(
            sc.band_start_hz.clone(),
            vec![sc.spacing_hz; 2],
            256,
            2,
            1.0,
            vec![Complex64::new(0.0, 0.0); 512],
            priors,
        )
        .unwrap();
        let theta = [1.0, 0.5, 50.0, 120.0, -PI / 4.0, PI / 4.0, 0.3, 1.1, 0.05, -0.02];
        // direct evaluation of the sum at (m, n) = (1, 0), f = 2.46 GHz
        let direct: Complex64 = (0..2)
            .map(|k| {
                let f = 2.46e9;
                let tau = (theta[2 + k] + theta[9]) * 1e-9;
                Complex64::from_polar(theta[k], theta[4 + k])
                    * Complex64::from_polar(1.0, -2.0 * PI * f * tau)
                    * Complex64::from_polar(1.0, theta[7])
            })
            .sum();
        let s = m.reconstruct(&theta, 1, 0).unwrap();
        assert_abs_diff_eq!(s.re, direct.re, epsilon = 1e-9);
        assert_abs_diff_eq!(s.im, direct.im, epsilon = 1e-9);
        // frozen regression value
        assert_abs_diff_eq!(s.re, 1.107_446_668_703_909, epsilon = 1e-9);
        assert_abs_diff_eq!(s.im, 0.987_227_629_410_664_8, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_likelihood_and_zero_gradient() {
        let sc = MultibandScenario::default();
        let draw = sc.generate(&mut stream(3, &[]), true).unwrap();
        let m = &draw.model;
        let full = ObsSubset::all(m.n_obs());
        let ll = m.log_likelihood(&draw.truth, &full);
        let expected = 512.0 * (1.0 / ((2.0 * PI).sqrt() * m.noise_var.sqrt())).ln();
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-6 * expected.abs());
        let mut g = vec![0.0; m.dim()];
        m.grad_log_likelihood(&draw.truth, &full, &mut g);
        for x in g {
            assert!(x.abs() < 1e-5 / m.noise_var, "{x}");
        }
        for (o, s) in draw.clean.iter().enumerate() {
            assert_eq!(m.observations[o], *s);
        }
    }

    #[test]
    fn global_phase_invariance_single_path() {
        let (mut m, theta) = single_path(0.4);
        m.observations = vec![
            Complex64::new(0.3, 0.2),
            Complex64::new(-0.1, 0.9),
            Complex64::new(0.5, -0.5),
            Complex64::new(1.0, 0.0),
        ];
        let mut shifted = theta.clone();
        shifted[0] = 0.8;
        shifted[1] = 33.3;
        let base = m.log_likelihood(&shifted, &ObsSubset::all(4));
        for c in [0.3, -1.2, 2.5] {
            let mut t = shifted.clone();
            t[2] += c;
            t[3] -= c;
            assert_abs_diff_eq!(m.log_likelihood(&t, &ObsSubset::all(4)), base, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let sc = MultibandScenario {
            subcarriers: 16,
            snr_db: 10.0,
            ..MultibandScenario::default()
        };
        let draw = sc.generate(&mut stream(4, &[]), false).unwrap();
        let m = &draw.model;
        let mut rng = stream(5, &[]);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..m.dim()).map(|j| m.scalar_prior(j).draw(&mut rng)).collect();
            check_derivatives(m, &theta, &ObsSubset::all(m.n_obs()), 1e-5);
        }
    }

    #[test]
    fn eval_along_matches_generic_path() {
        let sc = MultibandScenario {
            subcarriers: 8,
            ..MultibandScenario::default()
        };
        let draw = sc.generate(&mut stream(6, &[]), false).unwrap();
        let m = &draw.model;
        let subset = ObsSubset::from_indices(m.n_obs(), vec![0, 3, 9, 12, 15]).unwrap();
        let mut rng = stream(7, &[]);
        let theta: Vec<f64> = (0..m.dim()).map(|j| m.scalar_prior(j).draw(&mut rng)).collect();
        for j in 0..m.dim() {
            let values: Vec<f64> = (0..4).map(|_| m.scalar_prior(j).draw(&mut rng)).collect();
            let mut lj = vec![0.0; 4];
            let mut dj = vec![0.0; 4];
            m.eval_along(j, &theta, &values, &subset, &mut lj, &mut dj);
            for (n, &v) in values.iter().enumerate() {
                let mut t = theta.clone();
                t[j] = v;
                let mut g = vec![0.0; m.dim()];
                grad_log_joint(m, &t, &subset, &mut g);
                let l = log_joint(m, &t, &subset);
                assert_abs_diff_eq!(lj[n], l, epsilon = 1e-8 * l.abs().max(1.0));
                assert_abs_diff_eq!(dj[n], g[j], epsilon = 1e-8 * g[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn empirical_snr_matches_request() {
        let sc = MultibandScenario {
            snr_db: 10.0,
            ..MultibandScenario::default()
        };
        let mut acc = 0.0;
        let reps = 1000;
        for r in 0..reps {
            let d = sc.generate(&mut stream(100 + r, &[]), false).unwrap();
            let ps: f64 = d.clean.iter().map(|s| s.norm_sqr()).sum();
            let pn: f64 = d
                .clean
                .iter()
                .zip(&d.model.observations)
                .map(|(s, r)| (r - s).norm_sqr())
                .sum();
            acc += 10.0 * (ps / pn).log10();
        }
        let mean = acc / reps as f64;
        assert!((mean - 10.0).abs() < 0.5, "{mean}");
    }
}
