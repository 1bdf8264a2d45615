//! Brute-force references: the exact KL objective and its gradients by
//! enumeration, a weight-only PVBI baseline, central differences and a
//! Monte-Carlo Cramér-Rao bound.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::{log_joint, Model, ObsSubset, Simulate};
use crate::particles::{project_simplex, ParticleSet, ProjectionStop, PROJECTION_MAX_ITER};
use crate::rng::{purpose, stream};
use crate::solver::{evaluate_schedule, PosteriorResult, SolverConfig, TraceRow, VariationalState};

/// Cap on the number of enumerated index tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    max_terms: u64,
}

pub const MAX_ENUMERATION: u64 = 1_000_000;

impl EnumerationBudget {
    pub fn new(max_terms: u64) -> Result<Self> {
        if max_terms == 0 || max_terms > MAX_ENUMERATION {
            return Err(Error::Config(format!(
                "enumeration budget must be in 1..={MAX_ENUMERATION}"
            )));
        }
        Ok(Self { max_terms })
    }

    pub fn max_terms(&self) -> u64 {
        self.max_terms
    }

    fn check(&self, sizes: impl Iterator<Item = usize>) -> Result<u64> {
        let mut terms: u128 = 1;
        for s in sizes {
            terms = terms.saturating_mul(s as u128);
        }
        if terms > self.max_terms as u128 {
            return Err(Error::BudgetExceeded {
                terms,
                budget: self.max_terms,
            });
        }
        Ok(terms as u64)
    }
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_terms: MAX_ENUMERATION,
        }
    }
}

/// Calls `f(tuple, prob)` for every index tuple over `vars` (mixed radix,
/// last variable fastest). `prob` is the product of the tuple's weights.
fn enumerate(sets: &[ParticleSet], vars: &[usize], mut f: impl FnMut(&[usize], f64)) {
    let mut tuple = vec![0usize; sets.len()];
    loop {
        let prob: f64 = vars.iter().map(|&i| sets[i].weights[tuple[i]]).product();
        f(&tuple, prob);
        let mut k = vars.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            let i = vars[k];
            tuple[i] += 1;
            if tuple[i] < sets[i].len() {
                break;
            }
            tuple[i] = 0;
        }
    }
}

/// `Σ_j Σ_n w ln w − E_q[ln p(r, θ)]` over all `Np^J` index tuples.
pub fn exact_kl_objective(sets: &[ParticleSet], model: &dyn Model, budget: EnumerationBudget) -> Result<f64> {
    budget.check(sets.iter().map(ParticleSet::len))?;
    let full = ObsSubset::all(model.n_obs());
    let vars: Vec<usize> = (0..sets.len()).collect();
    let mut theta = vec![0.0; sets.len()];
    let mut expect = 0.0;
    enumerate(sets, &vars, |tuple, prob| {
        for (j, s) in sets.iter().enumerate() {
            theta[j] = s.positions[tuple[j]];
        }
        expect += prob * log_joint(model, &theta, &full);
    });
    let c: f64 = sets.iter().map(ParticleSet::neg_entropy).sum();
    Ok(c - expect)
}

/// Exact position and weight gradients of the KL objective for variable
/// `j`, using the likelihood restricted to `subset`.
pub fn exact_gradient(
    j: usize,
    sets: &[ParticleSet],
    model: &dyn Model,
    subset: &ObsSubset,
    budget: EnumerationBudget,
) -> Result<(Vec<f64>, Vec<f64>)> {
    budget.check(sets.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, s)| s.len()))?;
    let set = &sets[j];
    let np = set.len();
    let others: Vec<usize> = (0..sets.len()).filter(|&i| i != j).collect();
    let mut theta = vec![0.0; sets.len()];
    let mut el = vec![0.0; np];
    let mut ed = vec![0.0; np];
    let mut l = vec![0.0; np];
    let mut d = vec![0.0; np];
    enumerate(sets, &others, |tuple, prob| {
        for &i in &others {
            theta[i] = sets[i].positions[tuple[i]];
        }
        model.eval_along(j, &theta, &set.positions, subset, &mut l, &mut d);
        for n in 0..np {
            el[n] += prob * l[n];
            ed[n] += prob * d[n];
        }
    });
    let gp = (0..np).map(|n| -set.weights[n] * ed[n]).collect();
    let gw = (0..np).map(|n| set.weights[n].ln() + 1.0 - el[n]).collect();
    Ok((gp, gw))
}

/// Weight-only PVBI: positions stay at their initial draws; weights take
/// projected steps along exact expectations with the usual averaging.
pub fn pvbi_reference(model: &dyn Model, cfg: &SolverConfig) -> Result<PosteriorResult> {
    cfg.validate()?;
    let budget = EnumerationBudget::default();
    let jd = model.dim();
    let mut state = VariationalState::initialize(model, cfg.particles, cfg.seed)?;
    budget.check(state.sets.iter().map(ParticleSet::len))?;
    let full = ObsSubset::all(model.n_obs());
    let stop = ProjectionStop::Tolerance {
        tol: cfg.projection_tol,
        max_iter: PROJECTION_MAX_ITER,
    };
    let mut trace = Vec::with_capacity(cfg.max_iter);
    for _ in 0..cfg.max_iter {
        let t = state.t;
        let (rho, gamma) = evaluate_schedule(&cfg.schedule, t);
        let (_, gamma_w) = cfg.steps.at(t, model)?;
        let mut next = state.sets.clone();
        for j in 0..jd {
            let (_, gw) = exact_gradient(j, &state.sets, model, &full, budget)?;
            let w = &state.sets[j].weights;
            let u: Vec<f64> = w.iter().zip(&gw).map(|(w, g)| w - gamma_w[j] * g).collect();
            let proj = project_simplex(&u, cfg.weight_floor, stop)?;
            for (n, x) in next[j].weights.iter_mut().enumerate() {
                *x = (1.0 - gamma) * w[n] + gamma * proj.weights[n];
            }
            state.f_w[j] = gw;
        }
        state.sets = next;
        state.t += 1;
        let kl = if cfg.trace_kl_samples > 0 {
            Some(exact_kl_objective(&state.sets, model, budget)?)
        } else {
            None
        };
        trace.push(TraceRow {
            iteration: t,
            map: state.map(),
            mmse: state.mmse(),
            kl,
            rho,
            gamma,
        });
    }
    Ok(PosteriorResult {
        map: state.map(),
        mmse: state.mmse(),
        state,
        trace,
        converged: false,
    })
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`, with `h = 1e-5·max(1, |x|)`
/// unless given.
pub fn finite_diff(f: impl Fn(f64) -> f64, x: f64, h: Option<f64>) -> Result<f64> {
    let h = h.unwrap_or(1e-5 * x.abs().max(1.0));
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step {h}")));
    }
    let (a, b) = (f(x + h), f(x - h));
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            what: format!("finite difference at {x}"),
        });
    }
    Ok((a - b) / (2.0 * h))
}

/// Cramér-Rao variance bounds at `theta` for the coordinates in `vars`
/// (all when `None`), the remaining coordinates treated as known. The
/// Fisher matrix is the Monte-Carlo mean of score outer products over
/// `draws` simulated observation sets.
pub fn numerical_crlb<M: Simulate>(
    model: &M,
    theta: &[f64],
    vars: Option<&[usize]>,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::Config("CRLB needs at least one draw".into()));
    }
    let all: Vec<usize> = (0..model.dim()).collect();
    let vars = vars.unwrap_or(&all);
    let k = vars.len();
    let mut fim = DMatrix::<f64>::zeros(k, k);
    let mut rng = stream(seed, &[purpose::CRLB]);
    let mut g = vec![0.0; model.dim()];
    for _ in 0..draws {
        let sim = model.simulate(theta, &mut rng)?;
        sim.grad_log_likelihood(theta, &ObsSubset::all(sim.n_obs()), &mut g);
        for a in 0..k {
            for b in 0..k {
                fim[(a, b)] += g[vars[a]] * g[vars[b]];
            }
        }
    }
    fim /= draws as f64;
    let eig = fim.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::SingularFisher);
    }
    let inv = fim.try_inverse().ok_or(Error::SingularFisher)?;
    Ok((0..k).map(|a| inv[(a, a)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearGaussianModel, ToyScenario};
    use crate::particles::{BoxPrior, GaussianPrior};
    use approx::assert_abs_diff_eq;

    #[test]
    fn finite_diff_basics() {
        assert_abs_diff_eq!(finite_diff(|x| x * x, 3.0, None).unwrap(), 6.0, epsilon = 1e-7);
        assert_abs_diff_eq!(finite_diff(f64::ln, 1.0, None).unwrap(), 1.0, epsilon = 1e-7);
        assert!(finite_diff(f64::ln, 0.0, None).is_err());
    }

    #[test]
    fn single_particle_objective() {
        let (_, m) = ToyScenario::default().generate(&mut stream(1, &[])).unwrap();
        let set = ParticleSet::new(vec![0.4], vec![1.0], -3.0, 3.0).unwrap();
        let kl = exact_kl_objective(&[set], &m, EnumerationBudget::default()).unwrap();
        let lj = log_joint(&m, &[0.4], &ObsSubset::all(4));
        assert_abs_diff_eq!(kl, -lj, epsilon = 1e-9);
    }

    #[test]
    fn uniform_weights_constant_density() {
        let flat = LinearGaussianModel::new(
            vec![GaussianPrior::new(0.0, 1e-300).unwrap(); 2],
            vec![BoxPrior::new(0.0, 2.0).unwrap(); 2],
            vec![vec![0.0, 0.0]],
            vec![0.0],
            1.0,
        )
        .unwrap();
        let sets: Vec<_> = (0..2)
            .map(|_| ParticleSet::new(vec![-0.5, 0.0, 0.5], vec![1.0 / 3.0; 3], -1.0, 1.0).unwrap())
            .collect();
        let kl = exact_kl_objective(&sets, &flat, EnumerationBudget::default()).unwrap();
        let c = log_joint(&flat, &[0.0, 0.0], &ObsSubset::all(1));
        assert_abs_diff_eq!(kl, -2.0 * 3f64.ln() - c, epsilon = 1e-9);
    }

    #[test]
    fn budget_guard() {
        let sets: Vec<_> = (0..7)
            .map(|_| ParticleSet::new(vec![0.0; 10], vec![0.1; 10], -1.0, 1.0).unwrap())
            .collect();
        let (_, m) = ToyScenario {
            dim: 7,
            ..ToyScenario::default()
        }
        .generate(&mut stream(2, &[]))
        .unwrap();
        assert!(matches!(
            exact_kl_objective(&sets, &m, EnumerationBudget::default()),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(EnumerationBudget::new(2_000_000).is_err());
    }

    #[test]
    fn scalar_gaussian_crlb() {
        let sc = ToyScenario {
            n_obs: 8,
            noise_sd: 0.5,
            ..ToyScenario::default()
        };
        let (truth, m) = sc.generate(&mut stream(3, &[])).unwrap();
        let b = numerical_crlb(&m, &truth, None, 10_000, 4).unwrap();
        let expected = 0.25 / 8.0;
        assert!((b[0] - expected).abs() < 0.05 * expected, "{} vs {expected}", b[0]);
    }
}
