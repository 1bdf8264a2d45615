//! The solver unrolled into `T` layers with per-layer, per-variable step
//! sizes, and its exact reverse-mode derivative.
//!
//! A forward pass records a [`Tape`]: the input state of every layer and
//! the frozen randomness (mini-batch indices, observation subset,
//! projection iteration counts and masks). The backward pass walks the tape
//! in reverse through averaging, projections, smoothing and the gradient
//! computation, which needs Hessian rows of the log joint at every sampled
//! point.

mod hypernet;
mod train;

pub use hypernet::{Adam, HyperActivations, HyperNet, HyperNetGrad, STEP_FLOOR};
pub use train::{train, validation_loss, OptimizeMode, TrainConfig, TrainHistoryRow, TrainOutcome, TrainingInstance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::models::{grad_log_joint, hess_row_log_joint, log_joint, Model, ObsSubset};
use crate::particles::{
    ParticleSet, ProjectionStop, DEFAULT_PROJECTION_TOL, DEFAULT_WEIGHT_FLOOR, PROJECTION_MAX_ITER,
};
use crate::rng::purpose;
use crate::solver::{
    draw_step_randomness, evaluate_schedule, mc_kl, step_with, GradientMode, StepInputs, StepRecord, StepSchedule,
    VariationalState,
};

/// `Λ_j^(t) = [Γ_w, Γ_p]` for `t < layers`, `j < j0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub layers: usize,
    pub j0: usize,
    pub gamma_p: Vec<Vec<f64>>,
    pub gamma_w: Vec<Vec<f64>>,
}

impl LayerParams {
    pub fn constant(layers: usize, j0: usize, gamma_p: f64, gamma_w: f64) -> Self {
        Self {
            layers,
            j0,
            gamma_p: vec![vec![gamma_p; j0]; layers],
            gamma_w: vec![vec![gamma_w; j0]; layers],
        }
    }

    /// Layer `t` uses `gamma_p[t][j]` for variable `j`.
    pub fn from_rows(gamma_p: Vec<Vec<f64>>, gamma_w: Vec<Vec<f64>>) -> Result<Self> {
        let layers = gamma_p.len();
        let j0 = gamma_p.first().map_or(0, Vec::len);
        if layers == 0 || j0 == 0 || gamma_w.len() != layers {
            return Err(Error::Config("layer parameters need T ≥ 1 and J0 ≥ 1".into()));
        }
        if gamma_p.iter().chain(&gamma_w).any(|r| r.len() != j0) {
            return Err(Error::Config("ragged layer parameters".into()));
        }
        let p = Self {
            layers,
            j0,
            gamma_p,
            gamma_w,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .gamma_p
            .iter()
            .chain(&self.gamma_w)
            .flatten()
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::Config("step sizes must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        2 * self.layers * self.j0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout `[(t·J0 + j)·2] = Γ_w`, `[(t·J0 + j)·2 + 1] = Γ_p`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for t in 0..self.layers {
            for j in 0..self.j0 {
                v.push(self.gamma_w[t][j]);
                v.push(self.gamma_p[t][j]);
            }
        }
        v
    }

    pub fn from_flat(layers: usize, j0: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 2 * layers * j0 {
            return Err(Error::Config(format!(
                "expected {} step sizes, got {}",
                2 * layers * j0,
                v.len()
            )));
        }
        let mut p = Self::constant(layers, j0, 0.0, 0.0);
        for t in 0..layers {
            for j in 0..j0 {
                p.gamma_w[t][j] = v[2 * (t * j0 + j)];
                p.gamma_p[t][j] = v[2 * (t * j0 + j) + 1];
            }
        }
        Ok(p)
    }

    /// Copy with the slots of variables `j ≥ dim` set to zero.
    pub fn masked(&self, dim: usize) -> Self {
        let mut p = self.clone();
        for t in 0..self.layers {
            for j in dim.min(self.j0)..self.j0 {
                p.gamma_p[t][j] = 0.0;
                p.gamma_w[t][j] = 0.0;
            }
        }
        p
    }
}

/// How the backward pass treats the discrete sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerGradient {
    /// Indices are constants: exact derivative of the frozen-sample forward map.
    Frozen,
    /// Additionally routes gradient to weights through the counts,
    /// `∂/∂w_{i,m} ≈` mean of the per-sample contribution over samples drawn from particle `m`.
    #[default]
    StraightThrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfoldedNet {
    pub params: LayerParams,
    pub schedule: StepSchedule,
    pub batch: usize,
    pub weight_floor: f64,
    pub projection_tol: f64,
    pub subset_size: Option<usize>,
    pub sampler: SamplerGradient,
    pub execution: Execution,
}

impl UnfoldedNet {
    pub fn new(params: LayerParams) -> Self {
        Self {
            params,
            schedule: StepSchedule::default(),
            batch: 10,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            projection_tol: DEFAULT_PROJECTION_TOL,
            subset_size: None,
            sampler: SamplerGradient::default(),
            execution: Execution::default(),
        }
    }

    pub fn layers(&self) -> usize {
        self.params.layers
    }

    pub fn j0(&self) -> usize {
        self.params.j0
    }
}

/// Recorded forward pass: `states[t]` is the input of layer `t`,
/// `states[T]` the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Tape {
    pub states: Vec<VariationalState>,
    pub records: Vec<StepRecord>,
}

impl Tape {
    pub fn output(&self) -> &VariationalState {
        self.states.last().expect("tape holds the input state")
    }
}

/// Runs the `T` layers from `initial`. With `replay`, the mini-batches,
/// observation subsets and projection iteration counts are taken from that
/// tape instead of being drawn from `seed`.
pub fn forward_unfold(
    net: &UnfoldedNet,
    model: &dyn Model,
    initial: &VariationalState,
    seed: u64,
    replay: Option<&Tape>,
) -> Result<(VariationalState, Tape)> {
    let jd = model.dim();
    if jd > net.j0() {
        return Err(Error::Config(format!(
            "model has {jd} variables, net supports {}",
            net.j0()
        )));
    }
    net.params.validate()?;
    if let Some(r) = replay {
        if r.records.len() != net.layers() {
            return Err(Error::TapeMismatch(format!(
                "tape has {} layers, net {}",
                r.records.len(),
                net.layers()
            )));
        }
    }
    let mut state = initial.clone();
    let mut tape = Tape {
        states: vec![state.clone()],
        records: Vec::with_capacity(net.layers()),
    };
    for l in 0..net.layers() {
        let t = state.t;
        let (rho, gamma) = evaluate_schedule(&net.schedule, t);
        let (batch, subset, projection) = match replay {
            Some(r) => {
                let rec = &r.records[l];
                let stops = rec
                    .simplex
                    .iter()
                    .map(|p| ProjectionStop::Fixed(p.iterations))
                    .collect();
                (rec.inputs.batch.clone(), rec.inputs.subset.clone(), stops)
            }
            None => {
                let (b, s) = draw_step_randomness(model, &state, net.batch, net.subset_size, seed)?;
                let stop = ProjectionStop::Tolerance {
                    tol: net.projection_tol,
                    max_iter: PROJECTION_MAX_ITER,
                };
                (b, s, vec![stop; jd])
            }
        };
        let inputs = StepInputs {
            t,
            rho,
            gamma,
            gamma_p: net.params.gamma_p[l][..jd].to_vec(),
            gamma_w: net.params.gamma_w[l][..jd].to_vec(),
            batch,
            subset,
            projection,
            gradient: GradientMode::Sampled,
        };
        let (next, rec) = step_with(model, &state, inputs, net.weight_floor, net.execution)?;
        state = next;
        tape.states.push(state.clone());
        tape.records.push(rec);
    }
    Ok((state, tape))
}

/// Monte-Carlo KL loss of the final state with `b_grad` proportional
/// samples: mean of `Σ_j ln w_{j,n_j(b)} − ln p(r, θ^(b))`.
/// Returns the estimate, its standard error and the sample indices.
pub fn loss_kl_mc(
    state: &VariationalState,
    model: &dyn Model,
    b_grad: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<Vec<usize>>)> {
    mc_kl(model, &state.sets, b_grad, seed, &[purpose::LOSS])
}

/// The common-random-numbers surrogate of the loss: with the indices
/// `idx` frozen, `(1/B) Σ_b Π_j (w_{j,n_j(b)} / w0_{j,n_j(b)}) G_b` where
/// `G_b = Σ_j ln w_{j,n_j(b)} − ln p(r, θ^(b))`. It equals [`loss_kl_mc`]
/// at `w = w0`; its gradient is the likelihood-ratio estimate of the
/// gradient of the exact objective.
pub fn crn_loss(model: &dyn Model, sets: &[ParticleSet], base: &[Vec<f64>], idx: &[Vec<usize>]) -> f64 {
    let b = idx.first().map_or(0, Vec::len);
    let full = ObsSubset::all(model.n_obs());
    let mut theta = vec![0.0; sets.len()];
    let mut acc = 0.0;
    for k in 0..b {
        let mut ratio = 1.0;
        let mut lnq = 0.0;
        for (j, s) in sets.iter().enumerate() {
            let n = idx[j][k];
            theta[j] = s.positions[n];
            ratio *= s.weights[n] / base[j][n];
            lnq += s.weights[n].ln();
        }
        acc += ratio * (lnq - log_joint(model, &theta, &full));
    }
    acc / b as f64
}

/// Gradients of [`crn_loss`] at `w = w0` with respect to the final
/// positions and weights.
pub fn terminal_gradients(
    model: &dyn Model,
    sets: &[ParticleSet],
    idx: &[Vec<usize>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let jd = sets.len();
    let b = idx.first().map_or(0, Vec::len);
    let full = ObsSubset::all(model.n_obs());
    let mut dp: Vec<Vec<f64>> = sets.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut dw = dp.clone();
    let mut theta = vec![0.0; jd];
    let mut g = vec![0.0; jd];
    let inv = 1.0 / b as f64;
    for k in 0..b {
        let mut lnq = 0.0;
        for (j, s) in sets.iter().enumerate() {
            theta[j] = s.positions[idx[j][k]];
            lnq += s.weights[idx[j][k]].ln();
        }
        let gb = lnq - log_joint(model, &theta, &full);
        grad_log_joint(model, &theta, &full, &mut g);
        for (j, s) in sets.iter().enumerate() {
            let n = idx[j][k];
            dp[j][n] -= inv * g[j];
            dw[j][n] += inv * (gb + 1.0) / s.weights[n];
        }
    }
    (dp, dw)
}

/// Adjoints with respect to the step sizes, `[t][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGradients {
    pub gamma_p: Vec<Vec<f64>>,
    pub gamma_w: Vec<Vec<f64>>,
}

impl StepGradients {
    /// Flat layout matching [`LayerParams::to_flat`], zero-padded to `j0`.
    pub fn to_flat(&self, j0: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.gamma_p.len() * j0);
        for t in 0..self.gamma_p.len() {
            for j in 0..j0 {
                v.push(self.gamma_w[t].get(j).copied().unwrap_or(0.0));
                v.push(self.gamma_p[t].get(j).copied().unwrap_or(0.0));
            }
        }
        v
    }
}

/// Per-variable contribution of one layer's backward pass.
struct LayerAdjoint {
    dgp: f64,
    dgw: f64,
    /// Adjoint of the previous smoothed gradients of this variable.
    f_p: Vec<f64>,
    f_w: Vec<f64>,
    /// Adjoint contributions to the positions and weights of every variable.
    p: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

/// Reverse pass: maps adjoints of the final positions and weights to
/// adjoints of every layer's `Γ_p` and `Γ_w`.
pub fn backward_unfold(
    net: &UnfoldedNet,
    tape: &Tape,
    model: &dyn Model,
    d_positions: &[Vec<f64>],
    d_weights: &[Vec<f64>],
) -> Result<StepGradients> {
    let layers = tape.records.len();
    if layers != net.layers() || tape.states.len() != layers + 1 {
        return Err(Error::TapeMismatch("layer count".into()));
    }
    let jd = model.dim();
    let shape_ok = |a: &[Vec<f64>]| a.len() == jd && a.iter().zip(&tape.output().sets).all(|(v, s)| v.len() == s.len());
    if !shape_ok(d_positions) || !shape_ok(d_weights) {
        return Err(Error::TapeMismatch("adjoint shape".into()));
    }
    let mut pa: Vec<Vec<f64>> = d_positions.to_vec();
    let mut wa: Vec<Vec<f64>> = d_weights.to_vec();
    let mut fpa: Vec<Vec<f64>> = pa.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut fwa = fpa.clone();
    let mut grads = StepGradients {
        gamma_p: vec![vec![0.0; jd]; layers],
        gamma_w: vec![vec![0.0; jd]; layers],
    };
    for l in (0..layers).rev() {
        let rec = &tape.records[l];
        if rec.inputs.gradient != GradientMode::Sampled {
            return Err(Error::TapeMismatch("backward needs sampled gradients".into()));
        }
        let state = &tape.states[l];
        let next = &tape.states[l + 1];
        let parts = map_range(net.execution, jd, |j| {
            layer_backward(
                model,
                state,
                next,
                rec,
                j,
                &pa[j],
                &wa[j],
                &fpa[j],
                &fwa[j],
                net.sampler,
            )
        });
        let mut new_pa: Vec<Vec<f64>> = pa.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut new_wa = new_pa.clone();
        for (j, part) in parts.into_iter().enumerate() {
            grads.gamma_p[l][j] = part.dgp;
            grads.gamma_w[l][j] = part.dgw;
            fpa[j] = part.f_p;
            fwa[j] = part.f_w;
            for i in 0..jd {
                for n in 0..new_pa[i].len() {
                    new_pa[i][n] += part.p[i][n];
                    new_wa[i][n] += part.w[i][n];
                }
            }
        }
        pa = new_pa;
        wa = new_wa;
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    model: &dyn Model,
    state: &VariationalState,
    next: &VariationalState,
    rec: &StepRecord,
    j: usize,
    p_out: &[f64],
    w_out: &[f64],
    fp_out: &[f64],
    fw_out: &[f64],
    sampler: SamplerGradient,
) -> LayerAdjoint {
    let jd = state.sets.len();
    let set = &state.sets[j];
    let np = set.len();
    let inp = &rec.inputs;
    let (rho, gamma) = (inp.rho, inp.gamma);
    let mut p: Vec<Vec<f64>> = state.sets.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut w = p.clone();

    // averaging
    let bar_p: Vec<f64> = p_out.iter().map(|a| gamma * a).collect();
    let bar_w: Vec<f64> = w_out.iter().map(|a| gamma * a).collect();
    for n in 0..np {
        p[j][n] += (1.0 - gamma) * p_out[n];
        w[j][n] += (1.0 - gamma) * w_out[n];
    }
    // projections
    let up: Vec<f64> = (0..np).map(|n| rec.box_derivative[j][n] * bar_p[n]).collect();
    let uw = rec.simplex[j].vjp(&bar_w);
    let f_p = &next.f_p[j];
    let f_w = &next.f_w[j];
    let mut dgp = 0.0;
    let mut dgw = 0.0;
    for n in 0..np {
        p[j][n] += up[n];
        w[j][n] += uw[n];
        dgp -= up[n] * f_p[n];
        dgw -= uw[n] * f_w[n];
    }
    // smoothing
    let fp_tot: Vec<f64> = (0..np).map(|n| fp_out[n] - inp.gamma_p[j] * up[n]).collect();
    let fw_tot: Vec<f64> = (0..np).map(|n| fw_out[n] - inp.gamma_w[j] * uw[n]).collect();
    let fp_prev: Vec<f64> = fp_tot.iter().map(|a| (1.0 - rho) * a).collect();
    let fw_prev: Vec<f64> = fw_tot.iter().map(|a| (1.0 - rho) * a).collect();
    let gpa: Vec<f64> = fp_tot.iter().map(|a| rho * a).collect();
    let gwa: Vec<f64> = fw_tot.iter().map(|a| rho * a).collect();

    // gradient calculation: gp_n = −w_n mean_b a_{n,b}, gw_n = ln w_n + 1 − mean_b ℓ_{n,b}
    let b_size = inp.batch.size();
    let inv_b = 1.0 / b_size as f64;
    for n in 0..np {
        w[j][n] += gwa[n] / set.weights[n];
    }
    let idx = &inp.batch.indices;
    let counts: Vec<Vec<usize>> = state
        .sets
        .iter()
        .zip(idx)
        .map(|(s, ix)| {
            let mut c = vec![0usize; s.len()];
            for &m in ix {
                c[m] += 1;
            }
            c
        })
        .collect();
    let mut theta = vec![0.0; jd];
    let mut g = vec![0.0; jd];
    let mut h = vec![0.0; jd];
    for b in 0..b_size {
        inp.batch.fill(&state.sets, b, &mut theta);
        let mut contribution = 0.0;
        for n in 0..np {
            theta[j] = set.positions[n];
            grad_log_joint(model, &theta, &inp.subset, &mut g);
            hess_row_log_joint(model, j, &theta, &inp.subset, &mut h);
            let a = g[j];
            w[j][n] -= gpa[n] * a * inv_b;
            let a_adj = -set.weights[n] * gpa[n] * inv_b;
            let l_adj = -gwa[n] * inv_b;
            for k in 0..jd {
                let adj = a_adj * h[k] + l_adj * g[k];
                if k == j {
                    p[j][n] += adj;
                } else {
                    p[k][idx[k][b]] += adj;
                }
            }
            if sampler == SamplerGradient::StraightThrough {
                let l = log_joint(model, &theta, &inp.subset);
                contribution += gpa[n] * (-set.weights[n] * a) - gwa[n] * l;
            }
        }
        if sampler == SamplerGradient::StraightThrough {
            for k in (0..jd).filter(|&k| k != j) {
                let m = idx[k][b];
                w[k][m] += contribution / counts[k][m] as f64;
            }
        }
    }
    LayerAdjoint {
        dgp,
        dgw,
        f_p: fp_prev,
        f_w: fw_prev,
        p,
        w,
    }
}

/// Forward pass, loss and step-size gradients for one instance.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub state: VariationalState,
    pub tape: Tape,
    pub loss: f64,
    pub loss_se: f64,
    pub loss_indices: Vec<Vec<usize>>,
    pub grads: StepGradients,
}

pub fn loss_and_gradient(
    net: &UnfoldedNet,
    model: &dyn Model,
    initial: &VariationalState,
    seed: u64,
    b_grad: usize,
) -> Result<Evaluation> {
    let (state, tape) = forward_unfold(net, model, initial, seed, None)?;
    let (loss, loss_se, idx) = loss_kl_mc(&state, model, b_grad, seed)?;
    let (dp, dw) = terminal_gradients(model, &state.sets, &idx);
    let grads = backward_unfold(net, &tape, model, &dp, &dw)?;
    Ok(Evaluation {
        state,
        tape,
        loss,
        loss_se,
        loss_indices: idx,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearGaussianModel, ToyScenario};
    use crate::rng::stream;
    use crate::solver::{run_pspvbi_from, SolverConfig, StepSizes};

    fn toy(dim: usize, seed: u64) -> LinearGaussianModel {
        ToyScenario {
            dim,
            n_obs: 3,
            coupling: 0.5,
            ..ToyScenario::default()
        }
        .generate(&mut stream(seed, &[]))
        .unwrap()
        .1
    }

    #[test]
    fn zero_steps_are_identity() {
        let m = toy(2, 1);
        let s0 = VariationalState::initialize(&m, 3, 2).unwrap();
        let net = UnfoldedNet::new(LayerParams::constant(1, 2, 0.0, 0.0));
        let (s1, _) = forward_unfold(&net, &m, &s0, 5, None).unwrap();
        for (a, b) in s0.sets.iter().zip(&s1.sets) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((x - y).abs() < 1e-15);
            }
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn matches_solver_and_replays_exactly() {
        let m = toy(3, 3);
        let layers = 5;
        let params = LayerParams::from_rows(
            (0..layers).map(|t| vec![0.3 / (1.0 + t as f64), 0.2, 0.25]).collect(),
            (0..layers).map(|_| vec![0.05, 0.1, 0.02]).collect(),
        )
        .unwrap();
        let net = UnfoldedNet::new(params.clone());
        let s0 = VariationalState::initialize(&m, 4, 8).unwrap();
        let (out, tape) = forward_unfold(&net, &m, &s0, 11, None).unwrap();
        let cfg = SolverConfig {
            particles: 4,
            max_iter: layers,
            seed: 11,
            steps: StepSizes::Layered {
                position: params.gamma_p.clone(),
                weight: params.gamma_w.clone(),
            },
            ..SolverConfig::default()
        };
        let r = run_pspvbi_from(&m, &cfg, s0.clone()).unwrap();
        assert_eq!(r.state, out);
        let (again, _) = forward_unfold(&net, &m, &s0, 999, Some(&tape)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn flat_layout_round_trip() {
        let p = LayerParams::from_rows(
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![vec![5.0, 6.0], vec![7.0, 8.0]],
        )
        .unwrap();
        let f = p.to_flat();
        assert_eq!(f, vec![5.0, 1.0, 6.0, 2.0, 7.0, 3.0, 8.0, 4.0]);
        assert_eq!(LayerParams::from_flat(2, 2, &f).unwrap(), p);
        let m = p.masked(1);
        assert_eq!(m.gamma_p, vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
    }

    #[test]
    fn single_particle_loss_is_negative_log_joint() {
        let m = toy(1, 4);
        let set = ParticleSet::new(vec![0.3], vec![1.0], -3.0, 3.0).unwrap();
        let st = VariationalState::new(vec![set]);
        let (l, se, _) = loss_kl_mc(&st, &m, 50, 1).unwrap();
        let lj = log_joint(&m, &[0.3], &ObsSubset::all(3));
        assert!((l + lj).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn one_layer_interior_gradient_by_hand() {
        // one variable, two particles, interior positions, ρ = γ = 1:
        // ∂Loss/∂Γ_p = Σ_n (∂Loss/∂p_n)·(−f_p,n)
        let m = toy(1, 5);
        let set = ParticleSet::new(vec![-0.2, 0.4], vec![0.5, 0.5], -3.0, 3.0).unwrap();
        let s0 = VariationalState::new(vec![set]);
        let mut net = UnfoldedNet::new(LayerParams::constant(1, 1, 0.01, 0.01));
        net.batch = 2;
        let (out, tape) = forward_unfold(&net, &m, &s0, 3, None).unwrap();
        assert!(tape.records[0].box_derivative[0].iter().all(|&d| d == 1.0));
        let dp = vec![vec![0.7, -1.3]];
        let dw = vec![vec![0.0, 0.0]];
        let g = backward_unfold(&net, &tape, &m, &dp, &dw).unwrap();
        let expected: f64 = (0..2).map(|n| dp[0][n] * -out.f_p[0][n]).sum();
        assert!((g.gamma_p[0][0] - expected).abs() < 1e-12);
        assert_eq!(g.gamma_w[0][0], 0.0);
    }
}
