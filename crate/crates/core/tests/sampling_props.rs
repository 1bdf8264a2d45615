use proptest::prelude::*;
use pvbi::particles::ParticleSet;
use pvbi::rng::stream;
use pvbi::sampling::{draw_minibatch, proportional_counts, proportional_sample, subsample_observations};

/// All weight vectors on a grid of `steps` per unit over `np` particles.
fn grid_weights(np: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(np: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if np == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(np - 1, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(np, steps, &mut Vec::new(), &mut out);
    out.into_iter()
        .filter(|c| c.iter().all(|&k| k > 0))
        .map(|c| c.iter().map(|&k| k as f64 / steps as f64).collect())
        .collect()
}

#[test]
fn apportionment_bound_exhaustive() {
    for np in 1..=5 {
        for w in grid_weights(np, 12) {
            for b in 1..=20 {
                let c = proportional_counts(&w, b).unwrap();
                assert_eq!(c.iter().sum::<usize>(), b);
                for (ci, wi) in c.iter().zip(&w) {
                    let freq = *ci as f64 / b as f64;
                    assert!((freq - wi).abs() <= 1.0 / b as f64, "{w:?} b={b} counts {c:?}");
                    assert!((*ci as f64 - b as f64 * wi).abs() < 1.0);
                }
            }
        }
    }
}

#[test]
fn expectation_within_rounding_bound() {
    let phi = |x: f64| (3.0 * x).sin() + x * x;
    let positions = [-0.7, 0.1, 0.4, 0.9, 1.3];
    for w in grid_weights(5, 11) {
        let set = ParticleSet::new(positions.to_vec(), w.clone(), -2.0, 2.0).unwrap();
        let exact: f64 = w.iter().zip(&positions).map(|(w, p)| w * phi(*p)).sum();
        let sup = positions.iter().map(|p| phi(*p).abs()).fold(0.0, f64::max);
        for b in 1..=20 {
            let mb = draw_minibatch(std::slice::from_ref(&set), b, &mut [stream(b as u64, &[])]).unwrap();
            let mean = mb.indices[0].iter().map(|&i| phi(positions[i])).sum::<f64>() / b as f64;
            assert!((mean - exact).abs() <= 5.0 * sup / b as f64);
        }
    }
}

#[test]
fn uniform_weights_give_each_particle_once() {
    let c = proportional_counts(&[0.125; 8], 8).unwrap();
    assert_eq!(c, vec![1; 8]);
}

#[test]
fn dominant_mass_with_single_draw() {
    let np = 6;
    let e = 1e-3;
    let mut w = vec![e; np];
    w[0] = 1.0 - (np - 1) as f64 * e;
    for seed in 0..20 {
        assert_eq!(proportional_sample(&w, 1, &mut stream(seed, &[])).unwrap(), vec![0]);
    }
}

#[test]
fn minibatch_is_deterministic_and_routes_positions() {
    let sets = vec![
        ParticleSet::new(vec![0.1, 0.2, 0.3], vec![0.2, 0.3, 0.5], 0.0, 1.0).unwrap(),
        ParticleSet::new(vec![5.0, 6.0], vec![0.5, 0.5], 0.0, 10.0).unwrap(),
    ];
    let draw = |seed| {
        let mut r = [stream(seed, &[0]), stream(seed, &[1])];
        draw_minibatch(&sets, 10, &mut r).unwrap()
    };
    let a = draw(3);
    assert_eq!(a, draw(3));
    let mut theta = [0.0; 2];
    for b in 0..10 {
        a.fill(&sets, b, &mut theta);
        assert_eq!(theta[0], sets[0].positions[a.indices[0][b]]);
        assert_eq!(theta[1], sets[1].positions[a.indices[1][b]]);
    }
}

#[test]
fn subsample_edges_and_frequencies() {
    let all = subsample_observations(10, 10, &mut stream(1, &[])).unwrap();
    assert_eq!(all.indices(), (0..10).collect::<Vec<_>>());
    assert_eq!(all.scale(), 1.0);
    let one = subsample_observations(10, 1, &mut stream(1, &[])).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.scale(), 10.0);
    assert!(subsample_observations(10, 0, &mut stream(1, &[])).is_err());
    assert!(subsample_observations(10, 11, &mut stream(1, &[])).is_err());

    let mut freq = [0usize; 10];
    let mut rng = stream(2, &[]);
    let draws = 10_000;
    for _ in 0..draws {
        let s = subsample_observations(10, 3, &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        for i in s.iter() {
            freq[i] += 1;
        }
    }
    for f in freq {
        let p = f as f64 / draws as f64;
        assert!((p - 0.3).abs() < 0.02, "{p}");
    }
}

proptest! {
    #[test]
    fn shuffle_preserves_counts(raw in prop::collection::vec(0.01f64..1.0, 1..8), b in 1usize..40, seed in any::<u64>()) {
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let counts = proportional_counts(&w, b).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), b);
        let idx = proportional_sample(&w, b, &mut stream(seed, &[])).unwrap();
        for (i, &c) in counts.iter().enumerate() {
            prop_assert_eq!(idx.iter().filter(|&&x| x == i).count(), c);
        }
        for (c, w) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - b as f64 * w).abs() < 1.0);
        }
    }
}
