use proptest::prelude::*;
use pvbi::models::{grad_log_joint, log_joint, Model, MultibandScenario, ObsSubset, RssScenario};
use pvbi::rng::stream;

/// Worst relative error of the analytic joint gradient against a
/// fourth-order central difference at `theta`.
fn worst_gradient_error(m: &dyn Model, theta: &[f64]) -> f64 {
    let all = ObsSubset::all(m.n_obs());
    let mut g = vec![0.0; m.dim()];
    grad_log_joint(m, theta, &all, &mut g);
    let f0 = log_joint(m, theta, &all).abs();
    let mut worst: f64 = 0.0;
    for j in 0..m.dim() {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let at = |d: f64| {
            let mut t = theta.to_vec();
            t[j] += d;
            log_joint(m, &t, &all)
        };
        let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        // roundoff level of the difference quotient
        let floor = 1e-10 * f0.max(1.0) / h;
        worst = worst.max((g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(floor));
    }
    worst
}

fn point_in_boxes(m: &dyn Model, u: &[f64]) -> Vec<f64> {
    (0..m.dim())
        .map(|j| {
            let (lo, hi) = m.bounds(j);
            lo + (hi - lo) * u[j % u.len()]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rss_gradients_match_differences(seed in 0u64..1_000_000, u in prop::collection::vec(0.0f64..1.0, 14)) {
        let sc = RssScenario {
            estimate_references: true,
            ..RssScenario::default()
        };
        let data = sc.generate(&mut stream(seed, &[])).unwrap();
        let m = sc.build(&data).unwrap();
        let theta = point_in_boxes(&m, &u);
        let err = worst_gradient_error(&m, &theta);
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }

    #[test]
    fn marginal_rss_gradients_match_differences(seed in 0u64..1_000_000, u in prop::collection::vec(0.0f64..1.0, 2)) {
        let sc = RssScenario {
            marginalize_references: true,
            ..RssScenario::default()
        };
        let m = sc.build(&sc.generate(&mut stream(seed, &[])).unwrap()).unwrap();
        let theta = point_in_boxes(&m, &u);
        let err = worst_gradient_error(&m, &theta);
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }

    #[test]
    fn multiband_gradients_match_differences(seed in 0u64..1_000_000, u in prop::collection::vec(0.0f64..1.0, 10)) {
        let draw = MultibandScenario::default().generate(&mut stream(seed, &[]), false).unwrap();
        let theta = point_in_boxes(&draw.model, &u);
        let err = worst_gradient_error(&draw.model, &theta);
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }
}
