use pvbi::models::{LinearGaussianModel, ToyScenario};
use pvbi::rng::stream;
use pvbi::solver::VariationalState;
use pvbi::unfolding::{
    backward_unfold, crn_loss, forward_unfold, loss_kl_mc, terminal_gradients, HyperNet, LayerParams, SamplerGradient,
    Tape, UnfoldedNet,
};

fn toy(seed: u64) -> LinearGaussianModel {
    ToyScenario {
        dim: 2,
        n_obs: 4,
        coupling: 0.6,
        ..ToyScenario::default()
    }
    .generate(&mut stream(seed, &[]))
    .unwrap()
    .1
}

fn params() -> LayerParams {
    LayerParams::from_rows(
        vec![vec![0.08, 0.05], vec![0.06, 0.04], vec![0.03, 0.05]],
        vec![vec![0.03, 0.02], vec![0.02, 0.03], vec![0.015, 0.01]],
    )
    .unwrap()
}

/// Loss as a function of the flat step sizes with frozen randomness.
fn frozen_loss(
    net: &UnfoldedNet,
    m: &LinearGaussianModel,
    s0: &VariationalState,
    tape: &Tape,
    base: &[Vec<f64>],
    idx: &[Vec<usize>],
    flat: &[f64],
) -> f64 {
    let mut n = net.clone();
    n.params = LayerParams::from_flat(net.layers(), net.j0(), flat).unwrap();
    let (out, _) = forward_unfold(&n, m, s0, 0, Some(tape)).unwrap();
    crn_loss(m, &out.sets, base, idx)
}

fn check_instance(seed: u64) -> f64 {
    let m = toy(seed);
    let mut net = UnfoldedNet::new(params());
    net.sampler = SamplerGradient::Frozen;
    net.batch = 4;
    let s0 = VariationalState::initialize(&m, 3, seed + 100).unwrap();
    let (out, tape) = forward_unfold(&net, &m, &s0, seed + 7, None).unwrap();
    let (_, _, idx) = loss_kl_mc(&out, &m, 500, seed + 9).unwrap();
    let base: Vec<Vec<f64>> = out.sets.iter().map(|s| s.weights.clone()).collect();
    let (dp, dw) = terminal_gradients(&m, &out.sets, &idx);
    let g = backward_unfold(&net, &tape, &m, &dp, &dw).unwrap().to_flat(2);
    let x0 = net.params.to_flat();
    let mut worst: f64 = 0.0;
    for i in 0..x0.len() {
        let h = 1e-6 * x0[i].max(1e-3);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (frozen_loss(&net, &m, &s0, &tape, &base, &idx, &xp)
            - frozen_loss(&net, &m, &s0, &tape, &base, &idx, &xm))
            / (2.0 * h);
        let rel = (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn backward_matches_crn_finite_differences() {
    for seed in 0..5 {
        let worst = check_instance(seed);
        assert!(worst < 1e-3, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn hypernet_backward_matches_finite_differences() {
    let mut h = HyperNet::init(3, 2, 8, 8, params().to_flat(), &mut stream(1, &[])).unwrap();
    h.set_normalization(&[5.0, 10.0, 15.0, 20.0]);
    let up: Vec<f64> = (0..h.outputs()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let objective = |h: &HyperNet| -> f64 {
        let s = h.steps(&h.forward_raw(12.0));
        s.iter().zip(&up).map(|(a, b)| a * b).sum()
    };
    let g = h.backward(&h.forward_raw(12.0), &up).flat();
    let x0 = h.params_flat();
    let at = |i: usize, d: f64| {
        let mut x = x0.clone();
        x[i] += d;
        let mut hd = h.clone();
        hd.set_params_flat(&x).unwrap();
        objective(&hd)
    };
    for i in 0..x0.len() {
        // fourth-order central difference
        let step = 1e-3;
        let fd = (8.0 * (at(i, step) - at(i, -step)) - (at(i, 2.0 * step) - at(i, -2.0 * step))) / (12.0 * step);
        let rel = (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-6);
        assert!(rel < 1e-6, "param {i}: analytic {} fd {fd} rel {rel:e}", g[i]);
    }
}
