//! Seeded random instances. Every generator draws from a caller-owned
//! [`ChaCha8Rng`], so a seed fixes the instance bit for bit.

use crate::measures::{build_cost_matrix, CostKernel, CostMatrix, DiscreteMeasure};
use crate::multimarginal::{CostTensor, MultiProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights drawn from `uniform[0.5, 1.5]`, then normalized.
pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `n` atoms drawn from `uniform[0,1]^dim` with random weights.
pub fn random_measure(rng: &mut impl Rng, n: usize, dim: usize) -> DiscreteMeasure {
    loop {
        let atoms: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let weights = random_weights(rng, n);
        // Coincident draws are astronomically rare; redraw rather than fail.
        if let Ok(m) = DiscreteMeasure::new(atoms, weights) {
            return m;
        }
    }
}

/// `n` atoms in `uniform[0,1]^dim` with uniform weights.
pub fn random_uniform_measure(rng: &mut impl Rng, n: usize, dim: usize) -> DiscreteMeasure {
    loop {
        let atoms: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        if let Ok(m) = DiscreteMeasure::uniform(atoms) {
            return m;
        }
    }
}

/// Two random measures in the unit square with squared-euclidean cost.
pub fn random_instance(
    rng: &mut impl Rng,
    m: usize,
    n: usize,
) -> (DiscreteMeasure, DiscreteMeasure, CostMatrix) {
    let mu = random_measure(rng, m, 2);
    let nu = random_measure(rng, n, 2);
    let cost = build_cost_matrix(&CostKernel::SquaredEuclidean, &mu, &nu)
        .expect("squared-euclidean cost is finite on finite atoms");
    (mu, nu, cost)
}

/// Uniform `n`-point marginals with an iid `uniform[0,1)` cost matrix.
pub fn random_assignment_instance(
    rng: &mut impl Rng,
    n: usize,
) -> (DiscreteMeasure, DiscreteMeasure, CostMatrix) {
    let grid: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let mu = DiscreteMeasure::uniform_on_line(&grid).expect("distinct grid");
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let cost = CostMatrix::from_rows(rows).expect("finite nonnegative");
    (mu.clone(), mu, cost)
}

/// Uniform marginals of the given sizes with an iid `uniform[0,1)` tensor.
pub fn random_multi_problem(rng: &mut impl Rng, sizes: &[usize]) -> MultiProblem {
    let measures: Vec<DiscreteMeasure> = sizes
        .iter()
        .map(|&n| {
            let grid: Vec<f64> = (0..n).map(|k| k as f64).collect();
            DiscreteMeasure::uniform_on_line(&grid).expect("distinct grid")
        })
        .collect();
    let cost = CostTensor::from_fn(sizes.to_vec(), |_| rng.random::<f64>()).expect("valid tensor");
    MultiProblem::new(measures, cost).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_reproduce_instances() {
        let (a, _, ca) = random_instance(&mut rng(7), 4, 5);
        let (b, _, cb) = random_instance(&mut rng(7), 4, 5);
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let (c, _, _) = random_instance(&mut rng(8), 4, 5);
        assert_ne!(a, c);
    }

    #[test]
    fn weights_are_valid_probabilities() {
        let w = random_weights(&mut rng(1), 20);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = w.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi / lo <= 3.0);
    }
}
