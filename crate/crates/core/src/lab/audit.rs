//! Per-solution checks of the identities and bounds every converged pair of
//! Schrödinger potentials satisfies. The audit never fails; each check
//! reports its worst violation.

use crate::measures::{dual_value, CostMatrix, DiscreteMeasure};
use crate::sinkhorn::SinkhornSolution;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    /// Worst `lhs - rhs` over the check's inequalities; `<= 0` means it holds
    /// exactly. For identities this is the absolute defect.
    pub margin: f64,
    /// `max(margin, 0)`.
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub threshold: f64,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst_slack(&self) -> f64 {
        self.checks.iter().map(|c| c.slack).fold(0.0, f64::max)
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Audit at threshold `10 * tol` of the solve.
pub fn invariant_audit(
    solution: &SinkhornSolution,
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> AuditReport {
    invariant_audit_at(solution, cost, mu, nu, 10.0 * solution.tol)
}

pub fn invariant_audit_at(
    solution: &SinkhornSolution,
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    threshold: f64,
) -> AuditReport {
    let pp = &solution.potentials;
    let eps = pp.epsilon;
    let c = cost.values();
    let (f, g) = (&pp.f, &pp.g);
    let (m, n) = cost.shape();
    let mut checks = Vec::new();
    let mut push = |name: &str, margin: f64| {
        let slack = if margin.is_nan() {
            f64::INFINITY
        } else {
            margin.max(0.0)
        };
        checks.push(AuditCheck {
            name: name.to_owned(),
            margin,
            slack,
            passed: slack <= threshold,
        });
    };

    // min_j (C_ij - g_j) <= f_i <= sum_j nu_j C_ij, and symmetrically for g.
    let mut f_lower = f64::NEG_INFINITY;
    let mut f_upper = f64::NEG_INFINITY;
    for (row, &fi) in c.rows().into_iter().zip(f) {
        let lo = row
            .iter()
            .zip(g)
            .map(|(c, g)| c - g)
            .fold(f64::INFINITY, f64::min);
        let hi: f64 = row.iter().zip(nu.weights()).map(|(c, w)| c * w).sum();
        f_lower = f_lower.max(lo - fi);
        f_upper = f_upper.max(fi - hi);
    }
    let mut g_lower = f64::NEG_INFINITY;
    let mut g_upper = f64::NEG_INFINITY;
    for (col, &gj) in c.columns().into_iter().zip(g) {
        let lo = col
            .iter()
            .zip(f)
            .map(|(c, f)| c - f)
            .fold(f64::INFINITY, f64::min);
        let hi: f64 = col.iter().zip(mu.weights()).map(|(c, w)| c * w).sum();
        g_lower = g_lower.max(lo - gj);
        g_upper = g_upper.max(gj - hi);
    }
    push("f lower bound", f_lower);
    push("f upper bound", f_upper);
    push("g lower bound", g_lower);
    push("g upper bound", g_upper);

    // |f_i - f_k| <= max_j |C_ij - C_kj|, and symmetrically for g.
    let mut f_lip = f64::NEG_INFINITY;
    for i in 0..m {
        for k in i + 1..m {
            let modulus = c
                .row(i)
                .iter()
                .zip(c.row(k).iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            f_lip = f_lip.max((f[i] - f[k]).abs() - modulus);
        }
    }
    let mut g_lip = f64::NEG_INFINITY;
    for j in 0..n {
        for l in j + 1..n {
            let modulus = c
                .column(j)
                .iter()
                .zip(c.column(l).iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            g_lip = g_lip.max((g[j] - g[l]).abs() - modulus);
        }
    }
    push("f Lipschitz transfer", if m > 1 { f_lip } else { 0.0 });
    push("g Lipschitz transfer", if n > 1 { g_lip } else { 0.0 });

    // sum mu f = sum nu g = S / 2.
    let half = match dual_value(pp, cost, mu, nu, eps) {
        Ok(s) => s / 2.0,
        Err(_) => f64::NAN,
    };
    push("normalization f", (mu.integrate(f) - half).abs());
    push("normalization g", (nu.integrate(g) - half).abs());

    // sum_j nu_j exp((f_i + g_j - C_ij)/eps) = 1 for every i.
    let mass = solution.coupling.mass();
    let row_defect = mass
        .rows()
        .into_iter()
        .zip(mu.weights())
        .map(|(r, w)| (r.sum() / w - 1.0).abs())
        .fold(0.0, f64::max);
    push("row identity", row_defect);
    let col_l1: f64 = mass
        .columns()
        .into_iter()
        .zip(nu.weights())
        .map(|(col, w)| (col.sum() - w).abs())
        .sum();
    push("column marginal", col_l1);

    AuditReport {
        epsilon: eps,
        threshold,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{plan_from_potentials, sinkhorn_solve, SinkhornConfig};

    #[test]
    fn singleton_slacks_are_exactly_zero() {
        let d = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        let c = CostMatrix::from_rows(vec![vec![3.0]]).unwrap();
        let sol = sinkhorn_solve(&d, &d, &c, &SinkhornConfig::new(0.5)).unwrap();
        let report = invariant_audit(&sol, &c, &d, &d);
        assert!(report.all_passed());
        for check in &report.checks {
            assert_eq!(check.slack, 0.0, "{}", check.name);
        }
    }

    #[test]
    fn random_solution_passes() {
        let (mu, nu, c) = crate::random::random_instance(&mut crate::random::rng(3), 10, 10);
        let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(0.1)).unwrap();
        let report = invariant_audit(&sol, &c, &mu, &nu);
        assert!(report.all_passed(), "{report:#?}");
        assert_eq!(report.checks.len(), 10);
    }

    #[test]
    fn unbalanced_shift_breaks_normalization() {
        let (mu, nu, c) = crate::random::random_instance(&mut crate::random::rng(4), 6, 6);
        let mut sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(0.2)).unwrap();
        sol.potentials.f.iter_mut().for_each(|v| *v += 1.0);
        sol.coupling = plan_from_potentials(&sol.potentials, &c, 0.2, &mu, &nu).unwrap();
        let report = invariant_audit(&sol, &c, &mu, &nu);
        assert!(!report.check("normalization f").unwrap().passed);
        assert!(!report.check("row identity").unwrap().passed);
        assert!(!report.all_passed());
    }
}
