//! Parallel stochastic particle VBI.
//!
//! Every iteration draws one proportional mini-batch per variable, forms the
//! instantaneous position and weight gradients of the KL objective for all
//! variables at once, smooths them, takes a projected step and averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::models::{subsample_observations, Model, ObsSubset};
use crate::oracle;
use crate::particles::{
    clamp_with_derivative, init_particles, project_simplex, ParticleSet, ProjectionStop, SimplexProjection,
    DEFAULT_PROJECTION_TOL, DEFAULT_WEIGHT_FLOOR, PROJECTION_MAX_ITER,
};
use crate::rng::{purpose, stream};
use crate::sampling::{draw_minibatch, proportional_sample, MiniBatch};

/// `ρ(t) = a_ρ/(d_ρ+t)^κ₁`, `γ(t) = a_γ/(d_γ+t)^κ₂`, both 1 at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub a_rho: f64,
    pub d_rho: f64,
    pub kappa1: f64,
    pub a_gamma: f64,
    pub d_gamma: f64,
    pub kappa2: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a_rho: 5.0,
            d_rho: 5.0,
            kappa1: 0.9,
            a_gamma: 5.0,
            d_gamma: 15.0,
            kappa2: 1.0,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.5 < self.kappa1 && self.kappa1 < self.kappa2 && self.kappa2 <= 1.0) {
            return Err(Error::Config(format!(
                "schedule exponents must satisfy 0.5 < κ1 < κ2 ≤ 1, got {} and {}",
                self.kappa1, self.kappa2
            )));
        }
        let (r, g) = evaluate_schedule(self, 1);
        if !(r > 0.0 && r <= 1.0 && g > 0.0 && g <= 1.0) {
            return Err(Error::Config("schedule values must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `(ρ(t), γ(t))`.
pub fn evaluate_schedule(s: &StepSchedule, t: usize) -> (f64, f64) {
    if t == 0 {
        return (1.0, 1.0);
    }
    let t = t as f64;
    (
        s.a_rho / (s.d_rho + t).powf(s.kappa1),
        s.a_gamma / (s.d_gamma + t).powf(s.kappa2),
    )
}

/// Surrogate step sizes Γ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSizes {
    /// `Γ_p = fraction·(hi − lo)·(1+t)^−decay`, `Γ_w = weight`.
    Default {
        position_fraction: f64,
        decay: f64,
        weight: f64,
    },
    /// Per-variable bases, positions decayed by `(1+t)^−decay`.
    PerVariable {
        position: Vec<f64>,
        weight: Vec<f64>,
        decay: f64,
    },
    /// `Γ_p,j = scale / I_jj (1+t)^−decay` with `I_jj` the information
    /// diagonal at the box centers; variables without information fall back
    /// to a tenth of their box width.
    Curvature { scale: f64, decay: f64, weight: f64 },
    /// Per-iteration, per-variable values: `position[t][j]`, `weight[t][j]`.
    Layered {
        position: Vec<Vec<f64>>,
        weight: Vec<Vec<f64>>,
    },
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes::Default {
            position_fraction: 0.1,
            decay: 0.5,
            weight: 0.05,
        }
    }
}

impl StepSizes {
    /// `(Γ_p, Γ_w)` per variable at iteration `t`.
    pub fn at(&self, t: usize, model: &dyn Model) -> Result<(Vec<f64>, Vec<f64>)> {
        let jd = model.dim();
        let decayed = |decay: f64| (1.0 + t as f64).powf(-decay);
        let (p, w) = match self {
            StepSizes::Default {
                position_fraction,
                decay,
                weight,
            } => {
                let p = (0..jd)
                    .map(|j| {
                        let (lo, hi) = model.bounds(j);
                        position_fraction * (hi - lo) * decayed(*decay)
                    })
                    .collect();
                (p, vec![*weight; jd])
            }
            StepSizes::PerVariable {
                position,
                weight,
                decay,
            } => {
                if position.len() != jd || weight.len() != jd {
                    return Err(Error::Config(format!("need {jd} per-variable step sizes")));
                }
                (position.iter().map(|g| g * decayed(*decay)).collect(), weight.clone())
            }
            StepSizes::Curvature { .. } => return self.resolve(model)?.at(t, model),
            StepSizes::Layered { position, weight } => {
                let (Some(p), Some(w)) = (position.get(t), weight.get(t)) else {
                    return Err(Error::Config(format!("no step sizes for iteration {t}")));
                };
                if p.len() < jd || w.len() < jd {
                    return Err(Error::Config(format!("need {jd} step sizes at iteration {t}")));
                }
                (p[..jd].to_vec(), w[..jd].to_vec())
            }
        };
        if p.iter().chain(&w).any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("step sizes must be finite and non-negative".into()));
        }
        Ok((p, w))
    }

    /// Replaces model-dependent rules by explicit per-variable values.
    pub fn resolve(&self, model: &dyn Model) -> Result<StepSizes> {
        let StepSizes::Curvature { scale, decay, weight } = *self else {
            return Ok(self.clone());
        };
        let jd = model.dim();
        let (center, width): (Vec<f64>, Vec<f64>) = (0..jd)
            .map(|j| {
                let (lo, hi) = model.bounds(j);
                (0.5 * (lo + hi), hi - lo)
            })
            .unzip();
        let info = model.information_diagonal(&center);
        let position = (0..jd)
            .map(|j| {
                let g = scale / info[j];
                if g.is_finite() && info[j] > 0.0 {
                    g
                } else {
                    0.1 * width[j]
                }
            })
            .collect();
        Ok(StepSizes::PerVariable {
            position,
            weight: vec![weight; jd],
            decay,
        })
    }
}

/// How per-iteration gradients are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Sampled,
    /// Exact expectations by enumeration (small problems only).
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub particles: usize,
    pub batch: usize,
    pub max_iter: usize,
    pub weight_floor: f64,
    pub projection_tol: f64,
    pub schedule: StepSchedule,
    pub steps: StepSizes,
    /// Observation subset size |Ω|; `None` uses all observations.
    pub subset_size: Option<usize>,
    /// Stop once the largest MMSE change, relative to the box width, stays
    /// below this for `patience` iterations. Zero disables early stopping.
    pub stop_tol: f64,
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Samples for the per-iteration Monte-Carlo KL trace; zero disables it.
    pub trace_kl_samples: usize,
    pub gradient: GradientMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            particles: 10,
            batch: 10,
            max_iter: 35,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            projection_tol: DEFAULT_PROJECTION_TOL,
            schedule: StepSchedule::default(),
            steps: StepSizes::default(),
            subset_size: None,
            stop_tol: 0.0,
            patience: 10,
            seed: 0,
            execution: Execution::default(),
            trace_kl_samples: 0,
            gradient: GradientMode::Sampled,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::TooFewParticles(self.particles));
        }
        if self.batch == 0 || self.max_iter == 0 || self.patience == 0 {
            return Err(Error::Config("batch, max_iter and patience must be ≥ 1".into()));
        }
        if !(self.weight_floor >= 0.0) || self.weight_floor * self.particles as f64 >= 1.0 {
            return Err(Error::InfeasibleFloor {
                eps: self.weight_floor,
                np: self.particles,
            });
        }
        if !(self.projection_tol > 0.0) || !(self.stop_tol >= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.subset_size == Some(0) {
            return Err(Error::SubsetSize { size: 0, n: 0 });
        }
        self.schedule.validate()
    }

    fn projection_stop(&self) -> ProjectionStop {
        ProjectionStop::Tolerance {
            tol: self.projection_tol,
            max_iter: PROJECTION_MAX_ITER,
        }
    }
}

/// Particle sets of all variables plus the smoothed gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub sets: Vec<ParticleSet>,
    pub f_p: Vec<Vec<f64>>,
    pub f_w: Vec<Vec<f64>>,
    /// Index of the next iteration.
    pub t: usize,
}

impl VariationalState {
    pub fn new(sets: Vec<ParticleSet>) -> Self {
        let f_p = sets.iter().map(|s| vec![0.0; s.len()]).collect();
        let f_w = sets.iter().map(|s| vec![0.0; s.len()]).collect();
        Self { sets, f_p, f_w, t: 0 }
    }

    /// Particles drawn from each variable's prior with uniform weights.
    pub fn initialize(model: &dyn Model, np: usize, seed: u64) -> Result<Self> {
        let sets = (0..model.dim())
            .map(|j| {
                init_particles(
                    &model.scalar_prior(j),
                    np,
                    &mut stream(seed, &[purpose::INIT, j as u64]),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(sets))
    }

    pub fn map(&self) -> Vec<f64> {
        self.sets.iter().map(ParticleSet::map_estimate).collect()
    }

    pub fn mmse(&self) -> Vec<f64> {
        self.sets.iter().map(ParticleSet::mmse_estimate).collect()
    }

    /// `C(w) = Σ_j Σ_n w ln w`.
    pub fn neg_entropy(&self) -> f64 {
        self.sets.iter().map(ParticleSet::neg_entropy).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub map: Vec<f64>,
    pub mmse: Vec<f64>,
    pub kl: Option<f64>,
    pub rho: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorResult {
    pub state: VariationalState,
    pub map: Vec<f64>,
    pub mmse: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// `ln p(r, θ')` and its `j`-derivative at every particle of variable `j`,
/// with the other coordinates taken from `theta`.
fn evaluate_particles(
    model: &dyn Model,
    j: usize,
    positions: &[f64],
    theta: &[f64],
    subset: &ObsSubset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut l = vec![0.0; positions.len()];
    let mut d = vec![0.0; positions.len()];
    model.eval_along(j, theta, positions, subset, &mut l, &mut d);
    if l.iter().chain(&d).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            what: format!("log joint along {}", model.variable_name(j)),
        });
    }
    Ok((l, d))
}

/// Instantaneous position gradient, entry `n = −w_n ∂_j ln p(r, θ')` with
/// `θ'_j = p_{j,n}` and the remaining coordinates from `sample`.
pub fn grad_g_position(
    model: &dyn Model,
    j: usize,
    set: &ParticleSet,
    sample: &[f64],
    subset: &ObsSubset,
) -> Result<Vec<f64>> {
    let (_, d) = evaluate_particles(model, j, &set.positions, sample, subset)?;
    Ok(set.weights.iter().zip(d).map(|(w, a)| -w * a).collect())
}

/// Instantaneous weight gradient, entry `n = ln w_n + 1 − ln p(r, θ')`.
pub fn grad_g_weight(
    model: &dyn Model,
    j: usize,
    set: &ParticleSet,
    sample: &[f64],
    subset: &ObsSubset,
) -> Result<Vec<f64>> {
    check_weights(set)?;
    let (l, _) = evaluate_particles(model, j, &set.positions, sample, subset)?;
    Ok(set.weights.iter().zip(l).map(|(w, l)| w.ln() + 1.0 - l).collect())
}

fn check_weights(set: &ParticleSet) -> Result<()> {
    if set.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::NonFinite {
            iteration: 0,
            what: "weight below floor".into(),
        });
    }
    Ok(())
}

/// Batch-mean instantaneous gradients of variable `j`.
pub fn batch_gradients(
    model: &dyn Model,
    j: usize,
    sets: &[ParticleSet],
    batch: &MiniBatch,
    subset: &ObsSubset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let set = &sets[j];
    check_weights(set)?;
    let np = set.len();
    let b_size = batch.size();
    let mut gp = vec![0.0; np];
    let mut gw = vec![0.0; np];
    let mut theta = vec![0.0; sets.len()];
    for b in 0..b_size {
        batch.fill(sets, b, &mut theta);
        let (l, d) = evaluate_particles(model, j, &set.positions, &theta, subset)?;
        for n in 0..np {
            gp[n] -= set.weights[n] * d[n];
            gw[n] -= l[n];
        }
    }
    let inv = 1.0 / b_size as f64;
    for n in 0..np {
        gp[n] *= inv;
        gw[n] = set.weights[n].ln() + 1.0 + gw[n] * inv;
    }
    Ok((gp, gw))
}

/// `f ← (1−ρ) f + ρ g`.
pub fn smooth_gradients(f: &mut [f64], g: &[f64], rho: f64) {
    for (f, g) in f.iter_mut().zip(g) {
        *f = (1.0 - rho) * *f + rho * g;
    }
}

/// Frozen randomness and step sizes of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInputs {
    pub t: usize,
    pub rho: f64,
    pub gamma: f64,
    pub gamma_p: Vec<f64>,
    pub gamma_w: Vec<f64>,
    pub batch: MiniBatch,
    pub subset: ObsSubset,
    /// Simplex projection stopping rule per variable.
    pub projection: Vec<ProjectionStop>,
    pub gradient: GradientMode,
}

/// Everything one iteration produced, per variable.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub inputs: StepInputs,
    pub box_derivative: Vec<Vec<f64>>,
    pub simplex: Vec<SimplexProjection>,
}

/// One iteration with all randomness supplied by the caller.
pub fn step_with(
    model: &dyn Model,
    state: &VariationalState,
    inputs: StepInputs,
    eps: f64,
    exec: Execution,
) -> Result<(VariationalState, StepRecord)> {
    let jd = state.sets.len();
    if jd != model.dim() {
        return Err(Error::Config(format!(
            "state has {jd} variables, model {}",
            model.dim()
        )));
    }
    let (rho, gamma) = (inputs.rho, inputs.gamma);
    let per_var = try_map_range(exec, jd, |j| -> Result<_> {
        let (gp, gw) = match inputs.gradient {
            GradientMode::Sampled => batch_gradients(model, j, &state.sets, &inputs.batch, &inputs.subset)?,
            GradientMode::Exact => oracle::exact_gradient(
                j,
                &state.sets,
                model,
                &inputs.subset,
                oracle::EnumerationBudget::default(),
            )?,
        };
        let mut f_p = state.f_p[j].clone();
        let mut f_w = state.f_w[j].clone();
        smooth_gradients(&mut f_p, &gp, rho);
        smooth_gradients(&mut f_w, &gw, rho);
        let set = &state.sets[j];
        let np = set.len();
        let mut positions = vec![0.0; np];
        let mut derivative = vec![0.0; np];
        for n in 0..np {
            let bp = clamp_with_derivative(set.positions[n] - inputs.gamma_p[j] * f_p[n], set.lo, set.hi);
            derivative[n] = bp.derivative;
            positions[n] = (1.0 - gamma) * set.positions[n] + gamma * bp.value;
        }
        let u: Vec<f64> = (0..np).map(|n| set.weights[n] - inputs.gamma_w[j] * f_w[n]).collect();
        let proj = project_simplex(&u, eps, inputs.projection[j])?;
        let weights: Vec<f64> = (0..np)
            .map(|n| (1.0 - gamma) * set.weights[n] + gamma * proj.weights[n])
            .collect();
        if positions
            .iter()
            .chain(&weights)
            .chain(&f_p)
            .chain(&f_w)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite {
                iteration: inputs.t,
                what: model.variable_name(j),
            });
        }
        let next = ParticleSet {
            positions: positions.iter().map(|p| p.clamp(set.lo, set.hi)).collect(),
            weights,
            lo: set.lo,
            hi: set.hi,
        };
        Ok((next, f_p, f_w, derivative, proj))
    })?;
    let mut next = VariationalState {
        sets: Vec::with_capacity(jd),
        f_p: Vec::with_capacity(jd),
        f_w: Vec::with_capacity(jd),
        t: state.t + 1,
    };
    let mut box_derivative = Vec::with_capacity(jd);
    let mut simplex = Vec::with_capacity(jd);
    for (s, fp, fw, d, p) in per_var {
        next.sets.push(s);
        next.f_p.push(fp);
        next.f_w.push(fw);
        box_derivative.push(d);
        simplex.push(p);
    }
    Ok((
        next,
        StepRecord {
            inputs,
            box_derivative,
            simplex,
        },
    ))
}

/// Draws the randomness of iteration `state.t` from `seed`.
pub fn draw_step_randomness(
    model: &dyn Model,
    state: &VariationalState,
    batch: usize,
    subset_size: Option<usize>,
    seed: u64,
) -> Result<(MiniBatch, ObsSubset)> {
    let t = state.t as u64;
    let mut rngs: Vec<_> = (0..state.sets.len())
        .map(|i| stream(seed, &[purpose::SAMPLE, t, i as u64]))
        .collect();
    let mb = draw_minibatch(&state.sets, batch, &mut rngs)?;
    let n = model.n_obs();
    let subset = match subset_size {
        Some(s) if s < n => subsample_observations(n, s, &mut stream(seed, &[purpose::SUBSET, t]))?,
        Some(s) if s > n => return Err(Error::SubsetSize { size: s, n }),
        _ => ObsSubset::all(n),
    };
    Ok((mb, subset))
}

/// One PSPVBI iteration under `cfg`.
pub fn pspvbi_step(
    model: &dyn Model,
    state: &VariationalState,
    cfg: &SolverConfig,
) -> Result<(VariationalState, StepRecord)> {
    let t = state.t;
    let (rho, gamma) = evaluate_schedule(&cfg.schedule, t);
    let (gamma_p, gamma_w) = cfg.steps.at(t, model)?;
    let (batch, subset) = draw_step_randomness(model, state, cfg.batch, cfg.subset_size, cfg.seed)?;
    let inputs = StepInputs {
        t,
        rho,
        gamma,
        gamma_p,
        gamma_w,
        batch,
        subset,
        projection: vec![cfg.projection_stop(); state.sets.len()],
        gradient: cfg.gradient,
    };
    step_with(model, state, inputs, cfg.weight_floor, cfg.execution)
}

/// Monte-Carlo estimate of `E_q[Σ_j ln q_j − ln p(r, θ)]` with `b`
/// proportional samples per variable. Returns the mean, its standard
/// error and the sampled indices `idx[j][b]`.
pub fn mc_kl(
    model: &dyn Model,
    sets: &[ParticleSet],
    b: usize,
    seed: u64,
    path: &[u64],
) -> Result<(f64, f64, Vec<Vec<usize>>)> {
    if b == 0 {
        return Err(Error::Config("loss sample count must be positive".into()));
    }
    let idx: Vec<Vec<usize>> = sets
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut p = path.to_vec();
            p.push(j as u64);
            proportional_sample(&s.weights, b, &mut stream(seed, &p))
        })
        .collect::<Result<_>>()?;
    let full = ObsSubset::all(model.n_obs());
    let mut theta = vec![0.0; sets.len()];
    let mut vals = Vec::with_capacity(b);
    for k in 0..b {
        let mut lnq = 0.0;
        for (j, s) in sets.iter().enumerate() {
            theta[j] = s.positions[idx[j][k]];
            lnq += s.weights[idx[j][k]].ln();
        }
        vals.push(lnq - crate::models::log_joint(model, &theta, &full));
    }
    let mean = vals.iter().sum::<f64>() / b as f64;
    let se = if b > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ((b - 1) * b) as f64).sqrt()
    } else {
        0.0
    };
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            what: "KL estimate".into(),
        });
    }
    Ok((mean, se, idx))
}

fn trace_row(state: &VariationalState, iteration: usize, kl: Option<f64>, rho: f64, gamma: f64) -> TraceRow {
    TraceRow {
        iteration,
        map: state.map(),
        mmse: state.mmse(),
        kl,
        rho,
        gamma,
    }
}

/// Runs PSPVBI from freshly initialized particles.
pub fn run_pspvbi(model: &dyn Model, cfg: &SolverConfig) -> Result<PosteriorResult> {
    cfg.validate()?;
    let state = VariationalState::initialize(model, cfg.particles, cfg.seed)?;
    run_pspvbi_from(model, cfg, state)
}

/// Runs PSPVBI from `state` for up to `cfg.max_iter` further iterations.
pub fn run_pspvbi_from(model: &dyn Model, cfg: &SolverConfig, mut state: VariationalState) -> Result<PosteriorResult> {
    cfg.validate()?;
    let resolved = SolverConfig {
        steps: cfg.steps.resolve(model)?,
        ..cfg.clone()
    };
    let cfg = &resolved;
    let widths: Vec<f64> = state
        .sets
        .iter()
        .map(|s| (s.hi - s.lo).max(f64::MIN_POSITIVE))
        .collect();
    let mut trace = Vec::with_capacity(cfg.max_iter);
    let mut calm = 0;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let before = state.mmse();
        let (next, rec) = pspvbi_step(model, &state, cfg).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                iteration: state.t,
                what,
            },
            e => e,
        })?;
        state = next;
        let kl = if cfg.trace_kl_samples > 0 {
            Some(
                mc_kl(
                    model,
                    &state.sets,
                    cfg.trace_kl_samples,
                    cfg.seed,
                    &[purpose::LOSS, state.t as u64],
                )?
                .0,
            )
        } else {
            None
        };
        let row = trace_row(&state, rec.inputs.t, kl, rec.inputs.rho, rec.inputs.gamma);
        let change = row
            .mmse
            .iter()
            .zip(&before)
            .zip(&widths)
            .map(|((a, b), w)| (a - b).abs() / w)
            .fold(0.0, f64::max);
        trace.push(row);
        if cfg.stop_tol > 0.0 {
            calm = if change < cfg.stop_tol { calm + 1 } else { 0 };
            if calm >= cfg.patience {
                converged = true;
                break;
            }
        }
    }
    Ok(PosteriorResult {
        map: state.map(),
        mmse: state.mmse(),
        state,
        trace,
        converged,
    })
}
