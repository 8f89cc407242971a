use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RimError};

/// Tolerance on the sum of dataset weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Infinite stream of `(dataset, sample)` indices: a dataset is chosen by
/// weight, then a sample uniformly within it.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    sizes: Vec<usize>,
    choose: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(sizes: &[usize], weights: &[f64], seed: u64) -> Result<Self> {
        if sizes.len() != weights.len() || sizes.is_empty() {
            return Err(RimError::Config(format!(
                "{} datasets but {} weights",
                sizes.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(RimError::Config("dataset weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(RimError::Config(format!("dataset weights sum to {total}, not 1")));
        }
        if let Some(i) = (0..sizes.len()).find(|&i| sizes[i] == 0 && weights[i] > 0.0) {
            return Err(RimError::Config(format!(
                "dataset {i} is empty but has weight {}",
                weights[i]
            )));
        }
        let choose = WeightedIndex::new(weights).map_err(|e| RimError::Config(e.to_string()))?;
        Ok(Self {
            sizes: sizes.to_vec(),
            choose,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Equal weights over the given datasets.
    pub fn uniform(sizes: &[usize], seed: u64) -> Result<Self> {
        let w = vec![1.0 / sizes.len().max(1) as f64; sizes.len()];
        Self::new(sizes, &w, seed)
    }
}

impl Iterator for WeightedSampler {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let d = self.choose.sample(&mut self.rng);
        let i = self.rng.random_range(0..self.sizes[d]);
        Some((d, i))
    }
}

/// The sampler over concrete datasets.
pub fn weighted_sampler(datasets: &[super::Dataset], weights: &[f64], seed: u64) -> Result<WeightedSampler> {
    let sizes: Vec<usize> = datasets.iter().map(|d| d.samples.len()).collect();
    WeightedSampler::new(&sizes, weights, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dataset_is_uniform() {
        let n = 10_000;
        let mut counts = [0usize; 5];
        for (d, i) in WeightedSampler::new(&[5], &[1.0], 3).unwrap().take(n) {
            assert_eq!(d, 0);
            counts[i] += 1;
        }
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - 2000.0).abs() <= 3.0 * sd));
    }

    #[test]
    fn equal_weights_give_equal_frequencies() {
        let n = 10_000;
        let first = WeightedSampler::new(&[3, 40], &[0.5, 0.5], 11)
            .unwrap()
            .take(n)
            .filter(|(d, _)| *d == 0)
            .count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!((first as f64 - 5000.0).abs() <= 3.0 * sd, "{first}");
    }

    #[test]
    fn zero_weight_is_never_drawn() {
        assert!(WeightedSampler::new(&[4, 4, 4], &[0.25, 0.0, 0.75], 1)
            .unwrap()
            .take(5000)
            .all(|(d, _)| d != 1));
        // an empty dataset is fine as long as it carries no weight
        assert!(WeightedSampler::new(&[0, 3], &[0.0, 1.0], 1).is_ok());
    }

    #[test]
    fn invalid_configurations() {
        assert!(matches!(WeightedSampler::new(&[0, 3], &[0.5, 0.5], 1), Err(RimError::Config(_))));
        assert!(matches!(WeightedSampler::new(&[2, 3], &[0.5, 0.6], 1), Err(RimError::Config(_))));
        assert!(matches!(WeightedSampler::new(&[2], &[0.5, 0.5], 1), Err(RimError::Config(_))));
        assert!(matches!(WeightedSampler::new(&[2, 2], &[1.5, -0.5], 1), Err(RimError::Config(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let a: Vec<_> = WeightedSampler::uniform(&[3, 7], 5).unwrap().take(50).collect();
        let b: Vec<_> = WeightedSampler::uniform(&[3, 7], 5).unwrap().take(50).collect();
        assert_eq!(a, b);
    }
}
