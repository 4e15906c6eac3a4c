use super::{CostMatrix, Coupling, DiscreteMeasure, ExtendedReal, MeasureError, PotentialPair};
use crate::logsumexp::LogSumExp;
use ndarray::ArrayView2;

fn check_coupling(pi: &Coupling, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(), MeasureError> {
    let expected = (mu.len(), nu.len());
    if pi.shape() != expected {
        return Err(MeasureError::Shape {
            expected,
            found: pi.shape(),
        });
    }
    Ok(())
}

/// `H(pi | a (x) b)` on raw weight vectors, which may contain zeros.
///
/// Uses `0 log 0 = 0`; returns [`ExtendedReal::Infinity`] if `pi` puts mass
/// on a cell where `a_i b_j = 0`.
pub fn relative_entropy_raw(
    mass: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
) -> Result<ExtendedReal, MeasureError> {
    let expected = (a.len(), b.len());
    if mass.dim() != expected {
        return Err(MeasureError::Shape {
            expected,
            found: mass.dim(),
        });
    }
    let mut h = 0.0;
    for ((i, j), &p) in mass.indexed_iter() {
        if p == 0.0 {
            continue;
        }
        let q = a[i] * b[j];
        if q == 0.0 {
            return Ok(ExtendedReal::Infinity);
        }
        h += p * (p / q).ln();
    }
    if !h.is_finite() {
        return Err(MeasureError::NonFinite {
            what: "relative entropy",
            index: (0, 0),
        });
    }
    // Rounding can leave a tiny negative value at the product coupling.
    Ok(ExtendedReal::Finite(h.max(0.0)))
}

pub fn relative_entropy(
    pi: &Coupling,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<ExtendedReal, MeasureError> {
    check_coupling(pi, mu, nu)?;
    relative_entropy_raw(pi.mass(), mu.weights(), nu.weights())
}

/// `<C, pi> + epsilon H(pi | mu (x) nu)`; the pure transport cost when `epsilon = 0`.
pub fn primal_value(
    pi: &Coupling,
    cost: &CostMatrix,
    epsilon: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<ExtendedReal, MeasureError> {
    check_coupling(pi, mu, nu)?;
    cost.check_shape(mu, nu)?;
    let transport: f64 = pi
        .mass()
        .iter()
        .zip(cost.values().iter())
        .map(|(p, c)| p * c)
        .sum();
    if epsilon == 0.0 {
        return Ok(ExtendedReal::Finite(transport));
    }
    Ok(match relative_entropy(pi, mu, nu)? {
        ExtendedReal::Finite(h) => ExtendedReal::Finite(transport + epsilon * h),
        ExtendedReal::Infinity => ExtendedReal::Infinity,
    })
}

/// Entropic dual objective
/// `sum mu f + sum nu g - eps sum mu_i nu_j exp((f_i + g_j - C_ij)/eps) + eps`.
pub fn dual_value(
    pp: &PotentialPair,
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
) -> Result<f64, MeasureError> {
    if !(epsilon > 0.0) {
        return Err(MeasureError::InvalidKernel(format!(
            "dual value needs epsilon > 0, got {epsilon}"
        )));
    }
    cost.check_shape(mu, nu)?;
    if pp.f.len() != mu.len() || pp.g.len() != nu.len() {
        return Err(MeasureError::Shape {
            expected: (mu.len(), nu.len()),
            found: (pp.f.len(), pp.g.len()),
        });
    }
    let (lmu, lnu) = (mu.log_weights(), nu.log_weights());
    let mut acc = LogSumExp::new();
    let mut worst = ((0, 0), f64::NEG_INFINITY);
    for ((i, j), &c) in cost.values().indexed_iter() {
        let e = (pp.f[i] + pp.g[j] - c) / epsilon + lmu[i] + lnu[j];
        if !e.is_finite() {
            return Err(MeasureError::NonFinite {
                what: "dual exponent",
                index: (i, j),
            });
        }
        if e > worst.1 {
            worst = ((i, j), e);
        }
        acc.push(e);
    }
    let value = pp.objective(mu, nu) - epsilon * acc.value().exp() + epsilon;
    if !value.is_finite() {
        return Err(MeasureError::NonFinite {
            what: "dual value",
            index: worst.0,
        });
    }
    Ok(value)
}

/// L1 distances `(sum_i |row_i - mu_i|, sum_j |col_j - nu_j|)`.
pub fn marginal_residuals(
    pi: &Coupling,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(f64, f64), MeasureError> {
    check_coupling(pi, mu, nu)?;
    let mass = pi.mass();
    let row: f64 = mass
        .rows()
        .into_iter()
        .zip(mu.weights())
        .map(|(r, w)| (r.sum() - w).abs())
        .sum();
    let col: f64 = mass
        .columns()
        .into_iter()
        .zip(nu.weights())
        .map(|(c, w)| (c.sum() - w).abs())
        .sum();
    Ok((row, col))
}
