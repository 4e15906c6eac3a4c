use super::schedule::{CostFamily, EpsSchedule};
use super::{LabError, SolverSettings};
use crate::exact::{c_transform, solve_exact, TransformDirection};
use crate::measures::{build_cost_matrix, CostKernel, CostMatrix, DiscreteMeasure, PotentialPair};
use crate::sinkhorn::sinkhorn_solve_from;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Entropic dual value.
    pub s_eps: f64,
    /// Entropic primal value.
    pub i_eps: f64,
    /// `sum_i mu_i |f_eps,i - f_0,i|`.
    pub l1_f: f64,
    pub l1_g: f64,
    /// `S_eps - S_0`.
    pub gap_to_s0: f64,
    /// `max (f + g - c_eps)`.
    pub max_violation: f64,
    pub iterations: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Dual objective of `(f_eps, f_eps^c)` on the limit cost; always feasible.
    pub projected_dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Optimal value of the unregularized problem on the limit cost.
    pub s0: f64,
    pub exact_potentials: PotentialPair,
    pub dual_unique_hint: bool,
    /// L1 columns are meaningful only for unique Kantorovich potentials.
    pub l1_binding: bool,
    /// Potentials at the last scheduled epsilon.
    pub final_potentials: PotentialPair,
    pub tol: f64,
}

impl ConvergenceReport {
    /// Largest `|f_i - value|` or `|g_j - value|` over all rows.
    pub fn max_deviation_from(&self, value: f64) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.f_min, r.f_max, r.g_min, r.g_max])
            .map(|v| (v - value).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves the limit problem exactly, then Sinkhorn along the schedule,
/// warm-starting each epsilon from the previous potentials.
pub fn run_schedule(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    family: &CostFamily,
    schedule: &EpsSchedule,
    settings: &SolverSettings,
) -> Result<ConvergenceReport, LabError> {
    let costs = family.validate(schedule)?;
    let limit = family.limit();
    let exact = solve_exact(mu, nu, limit)?;
    let (f0, g0) = (&exact.potentials.f, &exact.potentials.g);

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(schedule.len());
    let mut warm: Option<Vec<f64>> = None;
    let mut last = None;
    for (&eps, cost) in schedule.values().iter().zip(&costs) {
        let cfg = settings.config(eps);
        let sol = match sinkhorn_solve_from(mu, nu, cost, &cfg, warm.as_deref()) {
            Ok(sol) => sol,
            Err(source) => {
                return Err(LabError::Solver {
                    epsilon: eps,
                    completed: rows,
                    source,
                })
            }
        };
        let pp = &sol.potentials;
        let projected_g = c_transform(&pp.f, limit, TransformDirection::RowsToCols);
        rows.push(ConvergenceRow {
            eps,
            s_eps: sol.dual,
            i_eps: sol.primal,
            l1_f: weighted_l1(mu.weights(), &pp.f, f0),
            l1_g: weighted_l1(nu.weights(), &pp.g, g0),
            gap_to_s0: sol.dual - exact.value,
            max_violation: max_violation(pp, cost),
            iterations: sol.iterations,
            f_min: pp.f.iter().copied().fold(f64::INFINITY, f64::min),
            f_max: pp.f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            g_min: pp.g.iter().copied().fold(f64::INFINITY, f64::min),
            g_max: pp.g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            projected_dual: mu.integrate(&pp.f) + nu.integrate(&projected_g),
        });
        warm = Some(pp.g.clone());
        last = Some(sol.potentials);
    }
    Ok(ConvergenceReport {
        rows,
        s0: exact.value,
        dual_unique_hint: exact.dual_unique_hint,
        l1_binding: exact.dual_unique_hint,
        exact_potentials: exact.potentials,
        final_potentials: last.expect("schedule has at least two entries"),
        tol: settings.tol,
    })
}

fn weighted_l1(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * (a - b).abs()).sum()
}

/// `max_ij (f_i + g_j - C_ij)`.
pub fn max_violation(pp: &PotentialPair, cost: &CostMatrix) -> f64 {
    cost.values()
        .indexed_iter()
        .map(|((i, j), &c)| pp.f[i] + pp.g[j] - c)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `mu` uniform on `{k/n}` and `nu` uniform on `{k/n + 1/(2n)}`: the two
/// supports never meet.
pub fn offset_grids(n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure), LabError> {
    if n == 0 {
        return Err(LabError::Config("grid size must be >= 1".into()));
    }
    let step = 1.0 / n as f64;
    let xs: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x + 0.5 * step).collect();
    Ok((
        DiscreteMeasure::uniform_on_line(&xs)?,
        DiscreteMeasure::uniform_on_line(&ys)?,
    ))
}

/// Off-diagonal indicator on disjoint grids, so the cost is identically 1
/// and every scheduled epsilon should give `f = g = 1/2`.
pub fn example52(
    n: usize,
    schedule: &EpsSchedule,
    settings: &SolverSettings,
) -> Result<ConvergenceReport, LabError> {
    let (mu, nu) = offset_grids(n)?;
    let cost = build_cost_matrix(&CostKernel::OffDiagonalIndicator, &mu, &nu)?;
    run_schedule(&mu, &nu, &CostFamily::fixed(cost), schedule, settings)
}

/// The same grids with squared-euclidean cost; potentials vary.
pub fn example52_control(
    n: usize,
    schedule: &EpsSchedule,
    settings: &SolverSettings,
) -> Result<ConvergenceReport, LabError> {
    let (mu, nu) = offset_grids(n)?;
    let cost = build_cost_matrix(&CostKernel::SquaredEuclidean, &mu, &nu)?;
    run_schedule(&mu, &nu, &CostFamily::fixed(cost), schedule, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_rows_are_exact() {
        let d = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        let c = CostMatrix::from_rows(vec![vec![3.0]]).unwrap();
        let s = EpsSchedule::new(1.0, 0.01, 0.5).unwrap();
        let r = run_schedule(&d, &d, &CostFamily::fixed(c), &s, &SolverSettings::default()).unwrap();
        assert_eq!(r.s0, 3.0);
        for row in &r.rows {
            assert_eq!(row.s_eps, 3.0);
            assert_eq!((row.l1_f, row.l1_g), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_cost_gives_halves() {
        let mu = DiscreteMeasure::uniform_on_line(&[0.0, 0.3, 0.9]).unwrap();
        let c = CostMatrix::constant(3, 3, 1.0).unwrap();
        let s = EpsSchedule::new(1.0, 0.05, 0.5).unwrap();
        let r = run_schedule(&mu, &mu, &CostFamily::fixed(c), &s, &SolverSettings::default()).unwrap();
        assert!(r.max_deviation_from(0.5) <= 1e-12);
        assert!(r.rows.iter().all(|row| row.l1_f <= 1e-12));
    }

    #[test]
    fn example52_single_atom() {
        let s = EpsSchedule::new(1.0, 1e-3, 0.5).unwrap();
        let r = example52(1, &s, &SolverSettings::default()).unwrap();
        assert_eq!(r.rows.len(), 11);
        assert!(r.max_deviation_from(0.5) <= 1e-9);
    }

    #[test]
    fn solver_failure_names_epsilon() {
        let (mu, nu) = offset_grids(8).unwrap();
        let c = build_cost_matrix(&CostKernel::SquaredEuclidean, &mu, &nu).unwrap();
        let s = EpsSchedule::new(1.0, 0.1, 0.5).unwrap();
        let settings = SolverSettings {
            max_iter: 1,
            ..SolverSettings::default()
        };
        match run_schedule(&mu, &nu, &CostFamily::fixed(c), &s, &settings) {
            Err(LabError::Solver {
                epsilon, completed, ..
            }) => {
                assert_eq!(epsilon, 1.0);
                assert!(completed.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
