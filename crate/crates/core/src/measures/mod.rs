//! Value types shared by every solver: discrete measures, costs, couplings
//! and potentials, plus the scalar functionals evaluated on them.

mod cost;
mod coupling;
mod functional;

pub use cost::{build_cost_matrix, CostKernel, CostMatrix};
pub use coupling::{Coupling, ExtendedReal, PotentialPair};
pub use functional::{dual_value, marginal_residuals, primal_value, relative_entropy, relative_entropy_raw};

use ndarray::{Array2, ArrayView1, ArrayView2};
use std::cmp::Ordering;
use thiserror::Error;

/// Tolerance on `|sum(weights) - 1|` accepted at construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("{atoms} atoms but {weights} weights")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("atom {index} has dimension {found}, expected {expected}")]
    RaggedAtoms {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("atom {index} has a non-finite coordinate")]
    NonFiniteAtom { index: usize },
    #[error("weight {index} = {value} is not strictly positive and finite")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}")]
    WeightSum { sum: f64 },
    #[error("atoms {first} and {second} coincide")]
    DuplicateAtom { first: usize, second: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("atom dimensions differ: {0} vs {1}")]
    AtomDimension(usize, usize),
    #[error("cost entry ({row}, {col}) = {value} is negative or non-finite")]
    InvalidCost { row: usize, col: usize, value: f64 },
    #[error("invalid cost kernel: {0}")]
    InvalidKernel(String),
    #[error("non-finite {what} at index {index:?}")]
    NonFinite {
        what: &'static str,
        index: (usize, usize),
    },
    #[error("mass entry ({row}, {col}) = {value} is negative or non-finite")]
    InvalidMass { row: usize, col: usize, value: f64 },
    #[error("marginal residuals ({row}, {col}) exceed feasibility tolerance {tol}")]
    Infeasible { row: f64, col: f64, tol: f64 },
}

/// Finitely many weighted atoms in `R^d`.
///
/// Weights are strictly positive and sum to one; atoms are pairwise distinct
/// under exact coordinate comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Array2<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        let dim = atoms[0].len();
        let mut flat = Vec::with_capacity(atoms.len() * dim);
        for (index, atom) in atoms.iter().enumerate() {
            if atom.len() != dim {
                return Err(MeasureError::RaggedAtoms {
                    index,
                    expected: dim,
                    found: atom.len(),
                });
            }
            flat.extend_from_slice(atom);
        }
        let atoms = Array2::from_shape_vec((atoms.len(), dim), flat)
            .expect("flattened atoms have the declared shape");
        Self::from_array(atoms, weights)
    }

    pub fn from_array(atoms: Array2<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let n = atoms.nrows();
        if n == 0 {
            return Err(MeasureError::Empty);
        }
        if weights.len() != n {
            return Err(MeasureError::LengthMismatch {
                atoms: n,
                weights: weights.len(),
            });
        }
        for (index, row) in atoms.rows().into_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(MeasureError::NonFiniteAtom { index });
            }
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MeasureError::NonPositiveWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MeasureError::WeightSum { sum });
        }
        check_distinct(atoms.view())?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            atoms,
            weights,
            log_weights,
        })
    }

    /// Equal weights `1/n` on the given atoms.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self, MeasureError> {
        let n = atoms.len();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self::new(atoms, vec![w; n])
    }

    /// One-dimensional measure with the given points and weights.
    pub fn on_line(points: &[f64], weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::new(points.iter().map(|&x| vec![x]).collect(), weights)
    }

    pub fn uniform_on_line(points: &[f64]) -> Result<Self, MeasureError> {
        Self::uniform(points.iter().map(|&x| vec![x]).collect())
    }

    /// Point mass at `atom`.
    pub fn dirac(atom: Vec<f64>) -> Result<Self, MeasureError> {
        Self::new(vec![atom], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `sum_i w_i h_i`, summed in index order.
    pub fn integrate(&self, h: &[f64]) -> f64 {
        debug_assert_eq!(h.len(), self.len());
        self.weights.iter().zip(h).map(|(w, x)| w * x).sum()
    }
}

fn lex_cmp(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

fn check_distinct(atoms: ArrayView2<'_, f64>) -> Result<(), MeasureError> {
    let mut order: Vec<usize> = (0..atoms.nrows()).collect();
    order.sort_by(|&a, &b| lex_cmp(atoms.row(a), atoms.row(b)).then(a.cmp(&b)));
    for pair in order.windows(2) {
        if atoms.row(pair[0]) == atoms.row(pair[1]) {
            let (first, second) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            return Err(MeasureError::DuplicateAtom { first, second });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            DiscreteMeasure::on_line(&[0.0, 1.0], vec![0.5, 0.0]),
            Err(MeasureError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            DiscreteMeasure::on_line(&[0.0, 1.0], vec![0.5, 0.6]),
            Err(MeasureError::WeightSum { .. })
        ));
        assert!(matches!(
            DiscreteMeasure::on_line(&[0.0], vec![0.5, 0.5]),
            Err(MeasureError::LengthMismatch { .. })
        ));
        assert_eq!(DiscreteMeasure::new(vec![], vec![]), Err(MeasureError::Empty));
    }

    #[test]
    fn weight_sum_tolerance_is_tight() {
        let w = 1.0 / 3.0;
        assert!(DiscreteMeasure::uniform_on_line(&[0.0, 1.0, 2.0]).is_ok());
        assert!(DiscreteMeasure::on_line(&[0.0, 1.0, 2.0], vec![w, w, w + 1e-11]).is_err());
    }

    #[test]
    fn rejects_duplicates_and_ragged_atoms() {
        assert_eq!(
            DiscreteMeasure::uniform(vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 1.0]]),
            Err(MeasureError::DuplicateAtom { first: 0, second: 2 })
        );
        assert!(matches!(
            DiscreteMeasure::uniform(vec![vec![0.0, 1.0], vec![2.0]]),
            Err(MeasureError::RaggedAtoms { index: 1, .. })
        ));
        assert!(matches!(
            DiscreteMeasure::uniform(vec![vec![f64::NAN]]),
            Err(MeasureError::NonFiniteAtom { index: 0 })
        ));
    }

    #[test]
    fn integrate_uses_weights() {
        let mu = DiscreteMeasure::on_line(&[0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(mu.integrate(&[4.0, 8.0]), 7.0);
        assert_eq!(mu.dim(), 1);
        assert_eq!(mu.log_weights()[0], 0.25f64.ln());
    }
}
