//! Proportional particle sampling and observation subsampling.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::rng::Rng;

pub use crate::models::subsample_observations;

/// Largest-remainder apportionment of `b` draws to `weights`. Remainder
/// ties go to the lowest index.
pub fn proportional_counts(weights: &[f64], b: usize) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::TooFewParticles(0));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::NonFinite {
            iteration: 0,
            what: "sampling weights".into(),
        });
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * b as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &c| {
        let ra = quotas[a] - quotas[a].floor();
        let rc = quotas[c] - quotas[c].floor();
        rc.total_cmp(&ra).then(a.cmp(&c))
    });
    for &i in order.iter().take(b.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// `b` particle indices with deterministic proportional counts in shuffled order.
pub fn proportional_sample(weights: &[f64], b: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let counts = proportional_counts(weights, b)?;
    let mut idx: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    idx.shuffle(rng);
    Ok(idx)
}

/// Sampled particle indices for every variable: `indices[i][b]` is the
/// particle of variable `i` used in sample `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub indices: Vec<Vec<usize>>,
}

impl MiniBatch {
    pub fn size(&self) -> usize {
        self.indices.first().map_or(0, Vec::len)
    }

    /// Sample `b` with the `j`-th coordinate left at whatever it was.
    pub fn fill(&self, sets: &[ParticleSet], b: usize, theta: &mut [f64]) {
        for (i, (s, idx)) in sets.iter().zip(&self.indices).enumerate() {
            theta[i] = s.positions[idx[b]];
        }
    }
}

/// One proportional sample per variable, each from its own stream.
pub fn draw_minibatch(sets: &[ParticleSet], b: usize, rngs: &mut [Rng]) -> Result<MiniBatch> {
    if b == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let indices = sets
        .iter()
        .zip(rngs.iter_mut())
        .map(|(s, r)| proportional_sample(&s.weights, b, r))
        .collect::<Result<_>>()?;
    Ok(MiniBatch { indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn counts_examples() {
        assert_eq!(proportional_counts(&[0.2, 0.3, 0.5], 10).unwrap(), vec![2, 3, 5]);
        assert_eq!(proportional_counts(&[0.25; 4], 10).unwrap(), vec![3, 3, 2, 2]);
        assert_eq!(proportional_counts(&[1.0], 7).unwrap(), vec![7]);
        assert_eq!(proportional_counts(&[0.5, 0.5], 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn sample_matches_counts() {
        let w = [0.1, 0.6, 0.3];
        let idx = proportional_sample(&w, 20, &mut stream(1, &[])).unwrap();
        assert_eq!(idx.len(), 20);
        for (i, c) in proportional_counts(&w, 20).unwrap().into_iter().enumerate() {
            assert_eq!(idx.iter().filter(|&&x| x == i).count(), c);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(proportional_counts(&[], 3).is_err());
        assert!(proportional_counts(&[0.0, 0.0], 3).is_err());
        assert!(proportional_counts(&[f64::NAN, 1.0], 3).is_err());
    }
}
