use proptest::prelude::*;
use pvbi::particles::{project_box, project_simplex_alternating};

fn simplex_input() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (2usize..=20).prop_flat_map(|np| (prop::collection::vec(-2.0f64..2.0, np), 0.0f64..(0.5 / np as f64)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn simplex_projection_is_feasible_idempotent_and_equivariant((w, eps) in simplex_input(), shift in 0usize..20) {
        let p = project_simplex_alternating(&w, eps, 1e-12).unwrap();
        let sum: f64 = p.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
        prop_assert!(p.weights.iter().all(|&x| x >= eps - 1e-12));

        let again = project_simplex_alternating(&p.weights, eps, 1e-12).unwrap();
        for (a, b) in again.weights.iter().zip(&p.weights) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }

        let np = w.len();
        let perm: Vec<usize> = (0..np).map(|i| (i * 7 + shift) % np).collect();
        let unique = {
            let mut s = perm.clone();
            s.sort_unstable();
            s.dedup();
            s.len() == np
        };
        let perm: Vec<usize> = if unique { perm } else { (0..np).rev().collect() };
        let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let pp = project_simplex_alternating(&wp, eps, 1e-12).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((pp.weights[k] - p.weights[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn box_projection_is_non_expansive(
        x in -10.0f64..10.0,
        y in -10.0f64..10.0,
        lo in -5.0f64..0.0,
        width in 0.0f64..5.0,
    ) {
        let hi = lo + width;
        let a = project_box(x, lo, hi).unwrap().value;
        let b = project_box(y, lo, hi).unwrap().value;
        prop_assert!((a - b).abs() <= (x - y).abs());
        prop_assert!(a >= lo && a <= hi);
    }
}
