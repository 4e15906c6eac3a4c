//! Log-domain Sinkhorn iteration for the Schrödinger potentials.
//!
//! Each sweep applies the two softmin (Schrödinger) updates
//!
//! ```text
//! g_j = -eps log sum_i mu_i exp((f_i - C_ij) / eps)
//! f_i = -eps log sum_j nu_j exp((g_j - C_ij) / eps)
//! ```
//!
//! and then shifts `(f, g) -> (f + a, g - a)` so that `sum mu f = sum nu g`.
//! Because the f-update comes last, row marginals of the reconstructed plan
//! are exact up to rounding; the stopping rule looks at the L1 residual of
//! both marginals.

use crate::logsumexp::LogSumExp;
use crate::measures::{
    dual_value, primal_value, CostMatrix, Coupling, DiscreteMeasure, MeasureError, PotentialPair,
};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinkhornError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("non-finite potential after sweep {sweep}")]
    NonFinite { sweep: usize },
    #[error("plan exponent {exponent} overflows at ({row}, {col})")]
    Overflow { row: usize, col: usize, exponent: f64 },
    #[error("MaxIterExceeded: residual {} after {max_iter} sweeps", history.last().copied().unwrap_or(f64::NAN))]
    MaxIterExceeded {
        max_iter: usize,
        /// `max(r_row, r_col)` after each sweep.
        history: Vec<f64>,
    },
    #[error("post-check `{check}` failed: {value:e} > {bound:e}")]
    PostCheck {
        check: &'static str,
        value: f64,
        bound: f64,
    },
}

impl SinkhornError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            SinkhornError::InvalidConfig(_) => "InvalidConfig",
            SinkhornError::Measure(_) => "Measure",
            SinkhornError::NonFinite { .. } => "NonFinite",
            SinkhornError::Overflow { .. } => "Overflow",
            SinkhornError::MaxIterExceeded { .. } => "MaxIterExceeded",
            SinkhornError::PostCheck { .. } => "PostCheck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Threshold on both L1 marginal residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative duality-gap threshold checked after convergence.
    pub gap_tol: f64,
    /// Row updates on the ambient rayon pool. Output is bitwise identical
    /// to the serial path.
    #[serde(default)]
    pub parallel: bool,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: 1e-10,
            max_iter: 100_000,
            gap_tol: 1e-6,
            parallel: false,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<(), SinkhornError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SinkhornError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(SinkhornError::InvalidConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SinkhornError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.gap_tol > 0.0) {
            return Err(SinkhornError::InvalidConfig(format!(
                "gap_tol must be > 0, got {}",
                self.gap_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    pub potentials: PotentialPair,
    pub coupling: Coupling,
    pub iterations: usize,
    pub residuals: (f64, f64),
    /// Primal entropic value at the reconstructed plan.
    pub primal: f64,
    /// Dual entropic value at the potentials.
    pub dual: f64,
    pub tol: f64,
}

impl SinkhornSolution {
    pub fn epsilon(&self) -> f64 {
        self.potentials.epsilon
    }
}

/// One softmin pass: `out_r = -eps log sum_k w_k exp((other_k - cost_rk)/eps)`.
fn softmin_into(
    out: &mut [f64],
    other: &[f64],
    log_w: &[f64],
    cost: ArrayView2<'_, f64>,
    epsilon: f64,
    parallel: bool,
) {
    let row = |r: usize| -> f64 {
        let mut acc = LogSumExp::new();
        for ((o, lw), c) in other.iter().zip(log_w).zip(cost.row(r).iter()) {
            acc.push((o - c) / epsilon + lw);
        }
        -epsilon * acc.value()
    };
    if parallel {
        out.par_iter_mut().enumerate().for_each(|(r, v)| *v = row(r));
    } else {
        for (r, v) in out.iter_mut().enumerate() {
            *v = row(r);
        }
    }
}

fn ensure_finite(v: &[f64], sweep: usize) -> Result<(), SinkhornError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SinkhornError::NonFinite { sweep })
    }
}

/// `f_i = -eps log sum_j nu_j exp((g_j - C_ij)/eps)`.
pub fn softmin_update(
    g: &[f64],
    cost: &CostMatrix,
    nu: &DiscreteMeasure,
    epsilon: f64,
) -> Result<Vec<f64>, SinkhornError> {
    if !(epsilon > 0.0) {
        return Err(SinkhornError::InvalidConfig(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let (m, n) = cost.shape();
    if g.len() != n || nu.len() != n {
        return Err(MeasureError::Shape {
            expected: (m, n),
            found: (m, g.len()),
        }
        .into());
    }
    let mut f = vec![0.0; m];
    softmin_into(&mut f, g, nu.log_weights(), cost.values(), epsilon, false);
    ensure_finite(&f, 0)?;
    Ok(f)
}

/// `g_j = -eps log sum_i mu_i exp((f_i - C_ij)/eps)`.
pub fn softmin_update_cols(
    f: &[f64],
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    epsilon: f64,
) -> Result<Vec<f64>, SinkhornError> {
    if !(epsilon > 0.0) {
        return Err(SinkhornError::InvalidConfig(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let (m, n) = cost.shape();
    if f.len() != m || mu.len() != m {
        return Err(MeasureError::Shape {
            expected: (m, n),
            found: (f.len(), n),
        }
        .into());
    }
    let mut g = vec![0.0; n];
    let ct = cost.values().t().to_owned();
    softmin_into(&mut g, f, mu.log_weights(), ct.view(), epsilon, false);
    ensure_finite(&g, 0)?;
    Ok(g)
}

fn normalization_shift(f: &[f64], g: &[f64], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    (nu.integrate(g) - mu.integrate(f)) / 2.0
}

/// Symmetric normalization: `(f + a, g - a)` with `a = (sum nu g - sum mu f) / 2`.
pub fn normalize_pair(pp: &PotentialPair, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> PotentialPair {
    let a = normalization_shift(&pp.f, &pp.g, mu, nu);
    PotentialPair {
        f: pp.f.iter().map(|v| v + a).collect(),
        g: pp.g.iter().map(|v| v - a).collect(),
        epsilon: pp.epsilon,
        normalized: true,
    }
}

/// `pi_ij = mu_i nu_j exp((f_i + g_j - C_ij)/eps)`. No feasibility check.
pub fn plan_from_potentials(
    pp: &PotentialPair,
    cost: &CostMatrix,
    epsilon: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<Coupling, SinkhornError> {
    if !(epsilon > 0.0) {
        return Err(SinkhornError::InvalidConfig(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    cost.check_shape(mu, nu)?;
    let (m, n) = cost.shape();
    let mut mass = Array2::zeros((m, n));
    for ((i, j), c) in cost.values().indexed_iter() {
        let exponent = (pp.f[i] + pp.g[j] - c) / epsilon;
        if !(exponent <= 700.0) {
            return Err(SinkhornError::Overflow {
                row: i,
                col: j,
                exponent,
            });
        }
        mass[[i, j]] = mu.weights()[i] * nu.weights()[j] * exponent.exp();
    }
    Ok(Coupling::new(mass)?)
}

/// Plan built with log-weights folded into the exponent, plus its L1
/// marginal residuals.
fn plan_and_residuals(
    f: &[f64],
    g: &[f64],
    cost: ArrayView2<'_, f64>,
    epsilon: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> (Array2<f64>, f64, f64) {
    let (lmu, lnu) = (mu.log_weights(), nu.log_weights());
    let mass = Array2::from_shape_fn(cost.dim(), |(i, j)| {
        ((f[i] + g[j] - cost[[i, j]]) / epsilon + lmu[i] + lnu[j]).exp()
    });
    let r_row = mass
        .rows()
        .into_iter()
        .zip(mu.weights())
        .map(|(r, w)| (r.sum() - w).abs())
        .sum();
    let r_col = mass
        .columns()
        .into_iter()
        .zip(nu.weights())
        .map(|(c, w)| (c.sum() - w).abs())
        .sum();
    (mass, r_row, r_col)
}

/// Solves from the default start `g = 0`.
pub fn sinkhorn_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution, SinkhornError> {
    sinkhorn_solve_from(mu, nu, cost, cfg, None)
}

/// Solves starting from `g0` (warm start) or `g = 0`.
pub fn sinkhorn_solve_from(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
    g0: Option<&[f64]>,
) -> Result<SinkhornSolution, SinkhornError> {
    cfg.validate()?;
    cost.check_shape(mu, nu)?;
    let (m, n) = cost.shape();
    let eps = cfg.epsilon;
    let c = cost.values();
    let ct = c.t().to_owned();

    let mut g = match g0 {
        Some(g0) if g0.len() == n => g0.to_vec(),
        Some(g0) => {
            return Err(MeasureError::Shape {
                expected: (m, n),
                found: (m, g0.len()),
            }
            .into())
        }
        None => vec![0.0; n],
    };
    ensure_finite(&g, 0)?;
    let mut f = vec![0.0; m];
    softmin_into(&mut f, &g, nu.log_weights(), c, eps, cfg.parallel);

    let mut history = Vec::new();
    for sweep in 1..=cfg.max_iter {
        softmin_into(&mut g, &f, mu.log_weights(), ct.view(), eps, cfg.parallel);
        softmin_into(&mut f, &g, nu.log_weights(), c, eps, cfg.parallel);
        let a = normalization_shift(&f, &g, mu, nu);
        f.iter_mut().for_each(|v| *v += a);
        g.iter_mut().for_each(|v| *v -= a);
        ensure_finite(&f, sweep)?;
        ensure_finite(&g, sweep)?;

        let (mass, r_row, r_col) = plan_and_residuals(&f, &g, c, eps, mu, nu);
        history.push(r_row.max(r_col));
        if r_row <= cfg.tol && r_col <= cfg.tol {
            return finish(mu, nu, cost, cfg, f, g, mass, sweep, (r_row, r_col));
        }
    }
    Err(SinkhornError::MaxIterExceeded {
        max_iter: cfg.max_iter,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
    f: Vec<f64>,
    g: Vec<f64>,
    mass: Array2<f64>,
    iterations: usize,
    residuals: (f64, f64),
) -> Result<SinkhornSolution, SinkhornError> {
    let eps = cfg.epsilon;
    // Row identity: sum_j nu_j exp((f_i + g_j - C_ij)/eps) = 1 for every i.
    let row_defect = mass
        .rows()
        .into_iter()
        .zip(mu.weights())
        .map(|(r, w)| (r.sum() / w - 1.0).abs())
        .fold(0.0, f64::max);
    if row_defect > 10.0 * cfg.tol {
        return Err(SinkhornError::PostCheck {
            check: "row identity",
            value: row_defect,
            bound: 10.0 * cfg.tol,
        });
    }
    let coupling = Coupling::with_marginals(mass, mu, nu, cfg.tol)?;
    let potentials = PotentialPair {
        f,
        g,
        epsilon: eps,
        normalized: true,
    };
    let primal = primal_value(&coupling, cost, eps, mu, nu)?.to_f64();
    let dual = dual_value(&potentials, cost, mu, nu, eps)?;
    let gap = (primal - dual).abs();
    let bound = cfg.gap_tol * primal.abs().max(1.0);
    if !(gap <= bound) {
        return Err(SinkhornError::PostCheck {
            check: "duality gap",
            value: gap,
            bound,
        });
    }
    Ok(SinkhornSolution {
        potentials,
        coupling,
        iterations,
        residuals,
        primal,
        dual,
        tol: cfg.tol,
    })
}
