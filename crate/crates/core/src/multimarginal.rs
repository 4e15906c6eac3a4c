//! N-marginal entropic transport by cyclic softmin updates, and a dense
//! linear program for the unregularized ground truth.
//!
//! Tensors are stored row-major (last axis fastest). Every reduction walks
//! the flat buffer in storage order, so results do not depend on anything
//! but the inputs.

use crate::exact::{solve_equality_lp, ExactError, SUPPORT_TOL, TIGHT_TOL};
use crate::logsumexp::LogSumExp;
use crate::measures::{DiscreteMeasure, MeasureError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest tensor accepted by [`mm_sinkhorn`].
pub const MAX_SINKHORN_CELLS: usize = 10_000_000;
/// Largest tensor accepted by [`mm_exact`].
pub const MAX_EXACT_CELLS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("tensor has {cells} cells, limit is {limit}")]
    TooLarge { cells: usize, limit: usize },
    #[error("non-finite potential after sweep {sweep}")]
    NonFinite { sweep: usize },
    #[error("MaxIterExceeded: residual {} after {max_iter} sweeps", history.last().copied().unwrap_or(f64::NAN))]
    MaxIterExceeded { max_iter: usize, history: Vec<f64> },
}

/// Dense N-way tensor of nonnegative finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl CostTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, MultiError> {
        let cells: usize = shape.iter().product();
        if shape.is_empty() || cells != values.len() {
            return Err(MultiError::Invalid(format!(
                "shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MultiError::Invalid(format!(
                "cost entry {k} = {} is negative or non-finite",
                values[k]
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self, MultiError> {
        let cells: usize = shape.iter().product();
        let mut values = Vec::with_capacity(cells);
        let mut idx = vec![0; shape.len()];
        for _ in 0..cells {
            values.push(f(&idx));
            advance(&mut idx, &shape);
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, n) in idx.iter().zip(&self.shape) {
            flat = flat * n + i;
        }
        self.values[flat]
    }
}

/// Row-major multi-index increment.
fn advance(idx: &mut [usize], shape: &[usize]) {
    for axis in (0..shape.len()).rev() {
        idx[axis] += 1;
        if idx[axis] < shape[axis] {
            return;
        }
        idx[axis] = 0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiProblem {
    measures: Vec<DiscreteMeasure>,
    cost: CostTensor,
}

impl MultiProblem {
    pub fn new(measures: Vec<DiscreteMeasure>, cost: CostTensor) -> Result<Self, MultiError> {
        if measures.len() < 2 {
            return Err(MultiError::Invalid(format!(
                "need at least 2 marginals, got {}",
                measures.len()
            )));
        }
        let sizes: Vec<usize> = measures.iter().map(DiscreteMeasure::len).collect();
        if sizes != cost.shape {
            return Err(MultiError::Invalid(format!(
                "tensor shape {:?} does not match marginal sizes {sizes:?}",
                cost.shape
            )));
        }
        Ok(Self { measures, cost })
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn cost(&self) -> &CostTensor {
        &self.cost
    }

    pub fn arity(&self) -> usize {
        self.measures.len()
    }
}

/// Potentials `f^1, ..., f^N`. Normalized means `sum_x mu_k(x) f^k(x)` is
/// the same for every `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialFamily {
    pub potentials: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub normalized: bool,
}

impl PotentialFamily {
    /// `sum_k sum_x mu_k(x) f^k(x)`.
    pub fn objective(&self, measures: &[DiscreteMeasure]) -> f64 {
        self.potentials
            .iter()
            .zip(measures)
            .map(|(f, mu)| mu.integrate(f))
            .sum()
    }

    fn normalize(&mut self, measures: &[DiscreteMeasure]) {
        let means: Vec<f64> = self
            .potentials
            .iter()
            .zip(measures)
            .map(|(f, mu)| mu.integrate(f))
            .collect();
        let target = means.iter().sum::<f64>() / means.len() as f64;
        for (f, m) in self.potentials.iter_mut().zip(means) {
            let shift = target - m;
            f.iter_mut().for_each(|v| *v += shift);
        }
        self.normalized = true;
    }

    /// `max_x (sum_k f^k(x_k) - c(x))`.
    pub fn max_violation(&self, cost: &CostTensor) -> f64 {
        let mut idx = vec![0; cost.shape.len()];
        let mut worst = f64::NEG_INFINITY;
        for &c in &cost.values {
            let s: f64 = idx.iter().zip(&self.potentials).map(|(&i, f)| f[i]).sum();
            worst = worst.max(s - c);
            advance(&mut idx, &cost.shape);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    pub shape: Vec<usize>,
    pub mass: Vec<f64>,
}

impl CouplingTensor {
    /// Marginal along every axis, each accumulated in storage order.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.shape.iter().map(|&n| vec![0.0; n]).collect();
        let mut idx = vec![0; self.shape.len()];
        for &p in &self.mass {
            for (axis, &i) in idx.iter().enumerate() {
                out[axis][i] += p;
            }
            advance(&mut idx, &self.shape);
        }
        out
    }

    /// L1 residual of each marginal against its measure.
    pub fn residuals(&self, measures: &[DiscreteMeasure]) -> Vec<f64> {
        self.marginals()
            .iter()
            .zip(measures)
            .map(|(m, mu)| m.iter().zip(mu.weights()).map(|(a, b)| (a - b).abs()).sum())
            .collect()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, n) in idx.iter().zip(&self.shape) {
            flat = flat * n + i;
        }
        self.mass[flat]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSinkhornSolution {
    pub family: PotentialFamily,
    pub coupling: CouplingTensor,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl MultiSinkhornSolution {
    /// `sum_k int f^k d mu_k`, the entropic dual value at a converged solution.
    pub fn dual_objective(&self, problem: &MultiProblem) -> f64 {
        self.family.objective(&problem.measures)
    }
}

fn plan(problem: &MultiProblem, f: &[Vec<f64>], epsilon: f64) -> CouplingTensor {
    let cost = &problem.cost;
    let mut idx = vec![0; cost.shape.len()];
    let mut mass = Vec::with_capacity(cost.values.len());
    for &c in &cost.values {
        let mut e = -c / epsilon;
        for (k, &i) in idx.iter().enumerate() {
            e += f[k][i] / epsilon + problem.measures[k].log_weights()[i];
        }
        mass.push(e.exp());
        advance(&mut idx, &cost.shape);
    }
    CouplingTensor {
        shape: cost.shape.clone(),
        mass,
    }
}

/// Cyclic (1, 2, ..., N) softmin updates in log domain, symmetric
/// normalization after every sweep. Stops when every marginal's L1 residual
/// is at most `tol`.
pub fn mm_sinkhorn(
    problem: &MultiProblem,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MultiSinkhornSolution, MultiError> {
    mm_sinkhorn_from(problem, epsilon, tol, max_iter, None)
}

/// As [`mm_sinkhorn`], optionally warm-started from `init`.
pub fn mm_sinkhorn_from(
    problem: &MultiProblem,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&PotentialFamily>,
) -> Result<MultiSinkhornSolution, MultiError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) || !(tol > 0.0) || max_iter == 0 {
        return Err(MultiError::Invalid(format!(
            "need epsilon > 0, tol > 0, max_iter >= 1; got {epsilon}, {tol}, {max_iter}"
        )));
    }
    let cells = problem.cost.len();
    if cells > MAX_SINKHORN_CELLS {
        return Err(MultiError::TooLarge {
            cells,
            limit: MAX_SINKHORN_CELLS,
        });
    }
    let shape = problem.cost.shape.clone();
    let arity = shape.len();
    let mut family = match init {
        Some(fam) => {
            let ok = fam.potentials.len() == arity
                && fam.potentials.iter().zip(&shape).all(|(f, &n)| f.len() == n);
            if !ok {
                return Err(MultiError::Invalid("warm start has the wrong shape".into()));
            }
            PotentialFamily {
                potentials: fam.potentials.clone(),
                epsilon,
                normalized: false,
            }
        }
        None => PotentialFamily {
            potentials: shape.iter().map(|&n| vec![0.0; n]).collect(),
            epsilon,
            normalized: false,
        },
    };

    let mut history = Vec::new();
    let mut acc: Vec<LogSumExp> = Vec::new();
    let mut idx = vec![0; arity];
    for sweep in 1..=max_iter {
        for axis in 0..arity {
            acc.clear();
            acc.resize(shape[axis], LogSumExp::new());
            idx.iter_mut().for_each(|i| *i = 0);
            for &c in &problem.cost.values {
                let mut e = -c / epsilon;
                for (k, &i) in idx.iter().enumerate() {
                    if k != axis {
                        e += family.potentials[k][i] / epsilon + problem.measures[k].log_weights()[i];
                    }
                }
                acc[idx[axis]].push(e);
                advance(&mut idx, &shape);
            }
            for (v, a) in family.potentials[axis].iter_mut().zip(&acc) {
                *v = -epsilon * a.value();
            }
        }
        family.normalize(&problem.measures);
        if family.potentials.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MultiError::NonFinite { sweep });
        }
        let coupling = plan(problem, &family.potentials, epsilon);
        let residuals = coupling.residuals(&problem.measures);
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        history.push(worst);
        if worst <= tol {
            return Ok(MultiSinkhornSolution {
                family,
                coupling,
                iterations: sweep,
                residuals,
            });
        }
    }
    Err(MultiError::MaxIterExceeded { max_iter, history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiExactSolution {
    pub value: f64,
    pub coupling: CouplingTensor,
    pub family: PotentialFamily,
}

/// Dense linear program over the tensor entries with one equality block per
/// marginal; duals are the Kantorovich potentials, normalized symmetrically.
pub fn mm_exact(problem: &MultiProblem) -> Result<MultiExactSolution, MultiError> {
    let cells = problem.cost.len();
    if cells > MAX_EXACT_CELLS {
        return Err(MultiError::TooLarge {
            cells,
            limit: MAX_EXACT_CELLS,
        });
    }
    let shape = &problem.cost.shape;
    let offsets: Vec<usize> = shape
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let rows: usize = shape.iter().sum();
    let mut a = ndarray::Array2::zeros((rows, cells));
    let mut idx = vec![0; shape.len()];
    for col in 0..cells {
        for (k, &i) in idx.iter().enumerate() {
            a[[offsets[k] + i, col]] = 1.0;
        }
        advance(&mut idx, shape);
    }
    let b: Vec<f64> = problem
        .measures
        .iter()
        .flat_map(|m| m.weights().iter().copied())
        .collect();
    let sol = solve_equality_lp(a.view(), &b, &problem.cost.values)?;
    let mut family = PotentialFamily {
        potentials: offsets
            .iter()
            .zip(shape)
            .map(|(&o, &n)| sol.duals[o..o + n].to_vec())
            .collect(),
        epsilon: 0.0,
        normalized: false,
    };
    family.normalize(&problem.measures);
    let coupling = CouplingTensor {
        shape: shape.clone(),
        mass: sol.x,
    };

    let scale = problem.cost.values.iter().fold(1.0f64, |a, &c| a.max(c));
    let violation = family.max_violation(&problem.cost);
    let mut slack_defect = 0.0f64;
    let mut idx = vec![0; shape.len()];
    for (&p, &c) in coupling.mass.iter().zip(&problem.cost.values) {
        if p > SUPPORT_TOL {
            let s: f64 = idx.iter().zip(&family.potentials).map(|(&i, f)| f[i]).sum();
            slack_defect = slack_defect.max(c - s);
        }
        advance(&mut idx, shape);
    }
    if violation > TIGHT_TOL * scale || slack_defect > TIGHT_TOL * scale {
        return Err(ExactError::Numerical(format!(
            "multimarginal optimality check failed: violation {violation:e}, slackness {slack_defect:e}"
        ))
        .into());
    }
    Ok(MultiExactSolution {
        value: sol.value,
        coupling,
        family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_multi_problem;

    fn singletons(n: usize) -> Vec<DiscreteMeasure> {
        (0..n)
            .map(|_| DiscreteMeasure::dirac(vec![0.0]).unwrap())
            .collect()
    }

    #[test]
    fn three_singletons_split_cost_in_thirds() {
        let p = MultiProblem::new(singletons(3), CostTensor::new(vec![1, 1, 1], vec![3.0]).unwrap()).unwrap();
        let sol = mm_sinkhorn(&p, 0.7, 1e-12, 10).unwrap();
        for f in &sol.family.potentials {
            assert!((f[0] - 1.0).abs() < 1e-15);
        }
        let ex = mm_exact(&p).unwrap();
        assert!((ex.value - 3.0).abs() < 1e-15);
        for f in &ex.family.potentials {
            assert!((f[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn not_all_equal_indicator_puts_mass_on_diagonal() {
        let two = || DiscreteMeasure::uniform_on_line(&[0.0, 1.0]).unwrap();
        let cost = CostTensor::from_fn(vec![2, 2, 2], |x| {
            if x[0] == x[1] && x[1] == x[2] {
                0.0
            } else {
                1.0
            }
        })
        .unwrap();
        let p = MultiProblem::new(vec![two(), two(), two()], cost).unwrap();
        let ex = mm_exact(&p).unwrap();
        assert!(ex.value.abs() < 1e-12);
        assert!((ex.coupling.get(&[0, 0, 0]) - 0.5).abs() < 1e-12);
        assert!((ex.coupling.get(&[1, 1, 1]) - 0.5).abs() < 1e-12);
        assert!(ex.family.max_violation(&p.cost) <= 1e-9);
    }

    fn two_marginal(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: &crate::CostMatrix) -> MultiProblem {
        let (m, n) = c.shape();
        let tensor = CostTensor::from_fn(vec![m, n], |x| c.get(x[0], x[1])).unwrap();
        MultiProblem::new(vec![mu.clone(), nu.clone()], tensor).unwrap()
    }

    #[test]
    fn two_marginals_match_pairwise_sinkhorn() {
        let mut r = crate::random::rng(11);
        let (mu, nu, c) = crate::random::random_instance(&mut r, 5, 5);
        let p = two_marginal(&mu, &nu, &c);
        let multi = mm_sinkhorn(&p, 0.1, 1e-13, 100_000).unwrap();
        let cfg = crate::SinkhornConfig::new(0.1).with_tol(1e-13);
        let pair = crate::sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dist(&multi.family.potentials[0], &pair.potentials.f) <= 1e-8);
        assert!(dist(&multi.family.potentials[1], &pair.potentials.g) <= 1e-8);
    }

    #[test]
    fn two_marginal_exact_matches_transport_simplex() {
        let mut r = crate::random::rng(12);
        for _ in 0..5 {
            let (mu, nu, c) = crate::random::random_instance(&mut r, 4, 4);
            let lp = mm_exact(&two_marginal(&mu, &nu, &c)).unwrap();
            let simplex = crate::exact::solve_exact(&mu, &nu, &c).unwrap();
            assert!((lp.value - simplex.value).abs() <= 1e-9);
        }
    }

    #[test]
    fn three_marginal_residuals_within_tol() {
        let p = random_multi_problem(&mut crate::random::rng(13), &[3, 3, 3]);
        let tol = 1e-11;
        let sol = mm_sinkhorn(&p, 0.5, tol, 10_000).unwrap();
        assert!(sol.residuals.iter().all(|&r| r <= tol));
        assert!(sol.family.normalized);
        let means: Vec<f64> = sol
            .family
            .potentials
            .iter()
            .zip(p.measures())
            .map(|(f, m)| m.integrate(f))
            .collect();
        assert!(means.iter().all(|m| (m - means[0]).abs() <= 1e-10));
    }

    #[test]
    fn entropic_violation_is_bounded_by_weights() {
        let p = random_multi_problem(&mut crate::random::rng(14), &[2, 3, 4]);
        let (eps, tol) = (0.05, 1e-10);
        let sol = mm_sinkhorn(&p, eps, tol, 100_000).unwrap();
        let mut idx = vec![0; 3];
        for &c in p.cost().values() {
            let s: f64 = idx.iter().zip(&sol.family.potentials).map(|(&i, f)| f[i]).sum();
            let logw: f64 = idx
                .iter()
                .zip(p.measures())
                .map(|(&i, m)| m.log_weights()[i])
                .sum();
            assert!(s - c <= -eps * logw + 10.0 * tol);
            advance(&mut idx, p.cost().shape());
        }
    }

    #[test]
    fn max_iter_reports_history() {
        let p = random_multi_problem(&mut crate::random::rng(15), &[3, 3, 3]);
        match mm_sinkhorn(&p, 0.01, 1e-14, 2) {
            Err(MultiError::MaxIterExceeded { max_iter: 2, history }) => assert_eq!(history.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_problems() {
        assert!(CostTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(CostTensor::new(vec![1], vec![-1.0]).is_err());
        let t = CostTensor::new(vec![1], vec![1.0]).unwrap();
        assert!(MultiProblem::new(singletons(1), t).is_err());
        let t = CostTensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert!(MultiProblem::new(singletons(2), t).is_err());
    }

    #[test]
    fn exact_size_limit() {
        let m = DiscreteMeasure::uniform_on_line(&(0..22).map(f64::from).collect::<Vec<_>>()).unwrap();
        let cost = CostTensor::from_fn(vec![22, 22, 22], |_| 1.0).unwrap();
        let p = MultiProblem::new(vec![m.clone(), m.clone(), m], cost).unwrap();
        assert!(matches!(mm_exact(&p), Err(MultiError::TooLarge { .. })));
    }

    #[test]
    fn tensor_indexing_is_row_major() {
        let t = CostTensor::from_fn(vec![2, 3], |x| (10 * x[0] + x[1]) as f64).unwrap();
        assert_eq!(t.values(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(t.get(&[1, 2]), 12.0);
    }
}
