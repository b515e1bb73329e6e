//! Seeded synthetic data for tests, benchmarks and demonstrations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, Task};
use crate::error::Result;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| normal(rng))
}

/// `y = X beta + noise * e` with standard normal `X`, `e` and
/// `beta ~ N(0, 1/p)`.
pub fn regression(n: usize, p: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_design(n, p, &mut rng);
    let scale = 1.0 / (p.max(1) as f64).sqrt();
    let beta = DVector::from_fn(p, |_, _| normal(&mut rng) * scale);
    let noise_vec = DVector::from_fn(n, |_, _| normal(&mut rng) * noise);
    let y = &x * beta + noise_vec;
    Dataset::new(x, y, Task::Regression)
}

/// Labels in `{-1, +1}` drawn from `P(y = 1) = sigmoid(x' beta)` where only
/// the first `informative` coefficients are nonzero, each `+-signal`.
pub fn classification(n: usize, p: usize, informative: usize, signal: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_design(n, p, &mut rng);
    let beta = DVector::from_fn(p, |j, _| {
        if j < informative {
            if j % 2 == 0 { signal } else { -signal }
        } else {
            0.0
        }
    });
    let u = &x * beta;
    let y = u.map(|ui| {
        let prob = 1.0 / (1.0 + (-ui).exp());
        if rng.random::<f64>() < prob { 1.0 } else { -1.0 }
    });
    Dataset::new(x, y, Task::Classification)
}

/// `n x p` design with an arbitrary uniform response; useful where only the
/// shape matters.
pub fn uniform(n: usize, p: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    Dataset::new(x, y, Task::Regression)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let a = regression(20, 3, 0.5, 7).unwrap();
        let b = regression(20, 3, 0.5, 7).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.responses(), b.responses());
        assert_eq!((a.n(), a.p()), (20, 3));
        let c = classification(50, 4, 2, 1.0, 3).unwrap();
        assert!(c.responses().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(c.task(), Task::Classification);
    }
}
