use pvbi::models::{LinearGaussianModel, Model, ObsSubset, ToyScenario};
use pvbi::oracle::{exact_gradient, exact_kl_objective, EnumerationBudget};
use pvbi::particles::{project_simplex_alternating, ParticleSet};
use pvbi::rng::stream;
use pvbi::sampling::{proportional_sample, MiniBatch};
use pvbi::solver::{
    batch_gradients, draw_step_randomness, evaluate_schedule, pspvbi_step, run_pspvbi, smooth_gradients, SolverConfig,
    StepSchedule, VariationalState,
};

fn toy(dim: usize, n_obs: usize, seed: u64) -> LinearGaussianModel {
    ToyScenario {
        dim,
        n_obs,
        coupling: 0.5,
        ..ToyScenario::default()
    }
    .generate(&mut stream(seed, &[]))
    .unwrap()
    .1
}

/// Distinct orderings of a multiset of indices.
fn orderings(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    let mut seen = Vec::new();
    for i in 0..items.len() {
        if seen.contains(&items[i]) {
            continue;
        }
        seen.push(items[i]);
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in orderings(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn sets_with_weights(m: &dyn Model, weights: &[Vec<f64>], seed: u64) -> Vec<ParticleSet> {
    let init = VariationalState::initialize(m, weights[0].len(), seed).unwrap();
    init.sets
        .into_iter()
        .zip(weights)
        .map(|(s, w)| ParticleSet {
            weights: w.clone(),
            ..s
        })
        .collect()
}

/// Mean of the batch gradient over every ordering of every variable's draws.
fn enumerated_batch_mean(m: &dyn Model, sets: &[ParticleSet], b: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let all = ObsSubset::all(m.n_obs());
    let lists: Vec<Vec<Vec<usize>>> = sets
        .iter()
        .map(|s| orderings(&proportional_sample(&s.weights, b, &mut stream(0, &[])).unwrap()))
        .collect();
    let np = sets[j].len();
    let (mut gp, mut gw) = (vec![0.0; np], vec![0.0; np]);
    let mut count = 0.0;
    for a in &lists[0] {
        for c in &lists[1] {
            let mb = MiniBatch {
                indices: vec![a.clone(), c.clone()],
            };
            let (p, w) = batch_gradients(m, j, sets, &mb, &all).unwrap();
            for n in 0..np {
                gp[n] += p[n];
                gw[n] += w[n];
            }
            count += 1.0;
        }
    }
    (
        gp.iter().map(|x| x / count).collect(),
        gw.iter().map(|x| x / count).collect(),
    )
}

#[test]
fn first_batch_gradient_is_unbiased_at_uniform_initialization() {
    for seed in 0..5 {
        let m = toy(2, 4, seed);
        let all = ObsSubset::all(m.n_obs());
        let s = VariationalState::initialize(&m, 2, seed).unwrap();
        for j in 0..2 {
            let (gp, gw) = enumerated_batch_mean(&m, &s.sets, 2, j);
            let (ep, ew) = exact_gradient(j, &s.sets, &m, &all, EnumerationBudget::default()).unwrap();
            assert!(rel(&gp, &ep) < 1e-12 && rel(&gw, &ew) < 1e-12);
        }
    }
}

#[test]
fn batch_gradient_is_unbiased_for_three_particles() {
    let weights = vec![vec![0.2, 0.4, 0.4], vec![0.6, 0.2, 0.2]];
    for seed in 0..5 {
        let m = toy(2, 4, seed);
        let all = ObsSubset::all(m.n_obs());
        let sets = sets_with_weights(&m, &weights, seed);
        for j in 0..2 {
            let (gp, gw) = enumerated_batch_mean(&m, &sets, 5, j);
            let (ep, ew) = exact_gradient(j, &sets, &m, &all, EnumerationBudget::default()).unwrap();
            assert!(rel(&gp, &ep) < 1e-12, "{gp:?} vs {ep:?}");
            assert!(rel(&gw, &ew) < 1e-12);
        }
    }
}

#[test]
fn smoothed_gradient_converges_with_frozen_distribution() {
    let weights = vec![vec![0.2, 0.3, 0.5], vec![0.5, 0.1, 0.4]];
    let schedule = StepSchedule::default();
    for seed in 0..5 {
        let m = toy(2, 200, seed);
        let all = ObsSubset::all(m.n_obs());
        let mut state = VariationalState::new(sets_with_weights(&m, &weights, seed));
        let mut f = vec![(vec![0.0; 3], vec![0.0; 3]); 2];
        for t in 0..=10_000 {
            state.t = t;
            let (mb, subset) = draw_step_randomness(&m, &state, 10, Some(100), seed).unwrap();
            let rho = evaluate_schedule(&schedule, t).0;
            for (j, fj) in f.iter_mut().enumerate() {
                let (gp, gw) = batch_gradients(&m, j, &state.sets, &mb, &subset).unwrap();
                smooth_gradients(&mut fj.0, &gp, rho);
                smooth_gradients(&mut fj.1, &gw, rho);
            }
        }
        for (j, fj) in f.iter().enumerate() {
            let (ep, ew) = exact_gradient(j, &state.sets, &m, &all, EnumerationBudget::default()).unwrap();
            assert!(
                rel(&fj.0, &ep) < 0.01,
                "seed {seed} j {j}: position {:e}",
                rel(&fj.0, &ep)
            );
            assert!(
                rel(&fj.1, &ew) < 0.01,
                "seed {seed} j {j}: weight {:e}",
                rel(&fj.1, &ew)
            );
        }
    }
}

#[test]
fn one_step_decreases_exact_objective() {
    for seed in 0..10 {
        let m = toy(2, 4, seed);
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let s0 = VariationalState::initialize(&m, 5, seed).unwrap();
        let (s1, _) = pspvbi_step(&m, &s0, &cfg).unwrap();
        let b = EnumerationBudget::default();
        assert!(exact_kl_objective(&s1.sets, &m, b).unwrap() < exact_kl_objective(&s0.sets, &m, b).unwrap());
    }
}

#[test]
fn iterates_stay_feasible_and_reach_a_stationary_point() {
    let (_, m) = ToyScenario::default().generate(&mut stream(3, &[])).unwrap();
    let cfg = SolverConfig {
        max_iter: 20_000,
        seed: 5,
        steps: pvbi::solver::StepSizes::Default {
            position_fraction: 0.1,
            decay: 0.0,
            weight: 0.05,
        },
        ..SolverConfig::default()
    };
    let mut state = VariationalState::initialize(&m, 10, cfg.seed).unwrap();
    for _ in 0..cfg.max_iter {
        state = pspvbi_step(&m, &state, &cfg).unwrap().0;
        for s in &state.sets {
            assert!(s.is_feasible(cfg.weight_floor, 1e-9));
        }
    }
    let (gp, gw) = cfg.steps.at(state.t, &m).unwrap();
    for j in 0..m.dim() {
        let s = &state.sets[j];
        let moved: f64 = (0..s.len())
            .map(|n| {
                let q = (s.positions[n] - gp[j] * state.f_p[j][n]).clamp(s.lo, s.hi);
                (s.positions[n] - q).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let u: Vec<f64> = (0..s.len()).map(|n| s.weights[n] - gw[j] * state.f_w[j][n]).collect();
        let proj = project_simplex_alternating(&u, cfg.weight_floor, 1e-12).unwrap();
        let wmoved: f64 = s
            .weights
            .iter()
            .zip(&proj.weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(moved < 1e-3, "position residual {moved}");
        assert!(wmoved < 1e-3, "weight residual {wmoved}");
    }
}

#[test]
fn scalar_conjugate_recovery() {
    let sc = ToyScenario::default();
    let seeds = 50;
    let iters = 200;
    let mut err = 0.0;
    let mut kl = vec![0.0; iters];
    for seed in 0..seeds {
        let (_, m) = sc.generate(&mut stream(seed, &[0])).unwrap();
        let cfg = SolverConfig {
            max_iter: iters,
            seed,
            trace_kl_samples: 500,
            ..SolverConfig::default()
        };
        let r = run_pspvbi(&m, &cfg).unwrap();
        let (lo, hi) = m.bounds(0);
        err += (r.mmse[0] - m.posterior().0[0]).abs() / (hi - lo);
        for (k, row) in r.trace.iter().enumerate() {
            kl[k] += row.kl.unwrap() / seeds as f64;
        }
    }
    let err = err / seeds as f64;
    assert!(err < 0.05, "mean error {err}");
    let trailing: Vec<f64> = (1..=iters / 20)
        .map(|c| kl[c * 20 - 20..c * 20].iter().sum::<f64>() / 20.0)
        .collect();
    for w in trailing.windows(2) {
        assert!(w[1] <= w[0], "{trailing:?}");
    }
}
