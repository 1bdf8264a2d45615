//! Mini-batch training of the step sizes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{forward_unfold, loss_and_gradient, loss_kl_mc, Adam, HyperNet, LayerParams, UnfoldedNet, STEP_FLOOR};
use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::models::Model;
use crate::rng::{derive_key, purpose, stream};
use crate::solver::VariationalState;

/// What the optimizer updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    /// Weights and biases of the hypernetwork.
    #[default]
    HyperNet,
    /// `ln Γ` of every layer directly, floored at `ln 1e-6`.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub b_grad: usize,
    pub particles: usize,
    pub validate_every: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub mode: OptimizeMode,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            b_grad: 500,
            particles: 10,
            validate_every: 10,
            patience: 5,
            seed: 0,
            mode: OptimizeMode::HyperNet,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.b_grad == 0 || self.validate_every == 0 || self.patience == 0 {
            return Err(Error::Config("training counts must be ≥ 1".into()));
        }
        if self.particles < 2 {
            return Err(Error::TooFewParticles(self.particles));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training or validation problem.
#[derive(Clone, Debug)]
pub struct TrainingInstance<M> {
    pub model: M,
    pub snr_db: f64,
    /// Seeds the initial particles and the validation forward pass.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistoryRow {
    pub iteration: usize,
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Net with the best validated step sizes (direct mode), or the input
    /// net (hypernetwork mode, the steps come from `hypernet`).
    pub net: UnfoldedNet,
    pub hypernet: Option<HyperNet>,
    pub history: Vec<TrainHistoryRow>,
    pub best_validation: f64,
}

struct Params {
    net: UnfoldedNet,
    hyper: Option<HyperNet>,
}

impl Params {
    fn layer_params(&self, snr: f64) -> Result<LayerParams> {
        match &self.hyper {
            Some(h) => h.forward(snr),
            None => Ok(self.net.params.clone()),
        }
    }

    fn net_for(&self, snr: f64, dim: usize) -> Result<UnfoldedNet> {
        let mut n = self.net.clone();
        n.params = self.layer_params(snr)?.masked(dim);
        Ok(n)
    }
}

/// Mean validation loss with frozen seeds.
pub fn validation_loss<M: Model>(
    net: &UnfoldedNet,
    hyper: Option<&HyperNet>,
    set: &[TrainingInstance<M>],
    particles: usize,
    b_grad: usize,
    exec: Execution,
) -> Result<f64> {
    let p = Params {
        net: net.clone(),
        hyper: hyper.cloned(),
    };
    let losses = try_map_range(exec, set.len(), |v| -> Result<f64> {
        let inst = &set[v];
        let n = p.net_for(inst.snr_db, inst.model.dim())?;
        let init = VariationalState::initialize(&inst.model, particles, inst.seed)?;
        let (out, _) = forward_unfold(&n, &inst.model, &init, inst.seed, None)?;
        Ok(loss_kl_mc(&out, &inst.model, b_grad, inst.seed)?.0)
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains either the hypernetwork (when given) or the raw step sizes.
pub fn train<M: Model>(
    net: &UnfoldedNet,
    hyper: Option<HyperNet>,
    train_set: &[TrainingInstance<M>],
    validation: &[TrainingInstance<M>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let use_hyper = cfg.mode == OptimizeMode::HyperNet;
    if use_hyper && hyper.is_none() {
        return Err(Error::Config("hypernetwork mode needs a hypernetwork".into()));
    }
    let mut p = Params {
        net: net.clone(),
        hyper: if use_hyper { hyper } else { None },
    };
    let mut theta: Vec<f64> = match &p.hyper {
        Some(h) => h.params_flat(),
        None => p.net.params.to_flat().iter().map(|g| g.max(STEP_FLOOR).ln()).collect(),
    };
    let mut adam = Adam::new(theta.len(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    let j0 = net.j0();
    let val = |p: &Params| {
        validation_loss(
            &p.net,
            p.hyper.as_ref(),
            validation,
            cfg.particles,
            cfg.b_grad,
            cfg.execution,
        )
    };

    let mut best = val(&p)?;
    let mut best_params = (p.net.params.clone(), p.hyper.clone());
    let mut history = vec![TrainHistoryRow {
        iteration: 0,
        train_loss: None,
        validation_loss: Some(best),
    }];
    let mut stale = 0;
    for it in 1..=cfg.iterations {
        let mut rng = stream(cfg.seed, &[purpose::TRAIN, it as u64]);
        let picks: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..train_set.len())).collect();
        let results = try_map_range(cfg.execution, cfg.batch, |k| -> Result<(f64, Vec<f64>)> {
            let inst = &train_set[picks[k]];
            let n = p.net_for(inst.snr_db, inst.model.dim())?;
            let init = VariationalState::initialize(&inst.model, cfg.particles, inst.seed)?;
            let seed = derive_key(cfg.seed, &[purpose::TRAIN, it as u64, k as u64]);
            let ev = loss_and_gradient(&n, &inst.model, &init, seed, cfg.b_grad)?;
            if !ev.loss.is_finite() {
                return Err(Error::NonFinite {
                    iteration: it,
                    what: format!("training loss of sample {k} (instance {})", picks[k]),
                });
            }
            let g = ev.grads.to_flat(j0);
            let grad = match &p.hyper {
                Some(h) => h.backward(&h.forward_raw(inst.snr_db), &g).flat(),
                None => g.iter().zip(&n.params.to_flat()).map(|(a, s)| a * s).collect(),
            };
            Ok((ev.loss, grad))
        })?;
        let inv = 1.0 / cfg.batch as f64;
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l * inv;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b * inv;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                what: "training gradient".into(),
            });
        }
        adam.step(&mut theta, &grad);
        match &mut p.hyper {
            Some(h) => h.set_params_flat(&theta)?,
            None => {
                let floor = STEP_FLOOR.ln();
                theta.iter_mut().for_each(|x| *x = x.max(floor));
                let steps: Vec<f64> = theta.iter().map(|x| x.exp()).collect();
                p.net.params = LayerParams::from_flat(net.layers(), j0, &steps)?;
            }
        }
        let mut row = TrainHistoryRow {
            iteration: it,
            train_loss: Some(loss),
            validation_loss: None,
        };
        if it % cfg.validate_every == 0 || it == cfg.iterations {
            let v = val(&p)?;
            row.validation_loss = Some(v);
            if v < best {
                best = v;
                best_params = (p.net.params.clone(), p.hyper.clone());
                stale = 0;
            } else {
                stale += 1;
            }
        }
        history.push(row);
        if stale >= cfg.patience {
            break;
        }
    }
    let mut out_net = net.clone();
    out_net.params = best_params.0;
    Ok(TrainOutcome {
        net: out_net,
        hypernet: best_params.1,
        history,
        best_validation: best,
    })
}
