use super::schedule::EpsSchedule;
use super::{LabError, SolverSettings};
use crate::exact::solve_exact;
use crate::logsumexp::LogSumExp;
use crate::measures::{CostMatrix, DiscreteMeasure, PotentialPair};
use crate::sinkhorn::sinkhorn_solve_from;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub eps: f64,
    /// `log pi_eps(E)`, computed without leaving the log domain.
    pub log_mass: f64,
    /// `pi_eps(E)` as a float; may be 0 when the event is far in the tail.
    pub mass: f64,
    /// `pi_eps(E)` is below the smallest normal float.
    pub mass_underflow: bool,
    /// `eps log pi_eps(E)`.
    pub rate: f64,
    /// `|rate - target|`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpReport {
    pub event: Vec<(usize, usize)>,
    /// `-min_{(i,j) in E} (C_ij - f0_i - g0_j)`.
    pub target: f64,
    pub rows: Vec<LdpRow>,
    /// Epsilons whose log mass was not finite, with the reason.
    pub dropped: Vec<(f64, String)>,
    pub dual_unique_hint: bool,
}

impl LdpReport {
    /// Gap at the smallest epsilon kept.
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }
}

/// `log sum_{(i,j) in E} mu_i nu_j exp((f_i + g_j - C_ij)/eps)`.
pub fn event_log_mass(
    pp: &PotentialPair,
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    event: &[(usize, usize)],
) -> f64 {
    let eps = pp.epsilon;
    let mut acc = LogSumExp::new();
    for &(i, j) in event {
        acc.push((pp.f[i] + pp.g[j] - cost.get(i, j)) / eps + mu.log_weights()[i] + nu.log_weights()[j]);
    }
    acc.value()
}

fn check_event(event: &[(usize, usize)], cost: &CostMatrix) -> Result<Vec<(usize, usize)>, LabError> {
    if event.is_empty() {
        return Err(LabError::Config("event must contain at least one cell".into()));
    }
    let (m, n) = cost.shape();
    if let Some(&(i, j)) = event.iter().find(|&&(i, j)| i >= m || j >= n) {
        return Err(LabError::Config(format!(
            "event cell ({i}, {j}) outside {m}x{n} grid"
        )));
    }
    let mut cells = event.to_vec();
    cells.sort_unstable();
    cells.dedup();
    Ok(cells)
}

/// Rates `eps log pi_eps(E)` along the schedule against the exact-dual
/// target.
pub fn ldp_estimate(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    event: &[(usize, usize)],
    schedule: &EpsSchedule,
    settings: &SolverSettings,
) -> Result<LdpReport, LabError> {
    let event = check_event(event, cost)?;
    let exact = solve_exact(mu, nu, cost)?;
    let (f0, g0) = (&exact.potentials.f, &exact.potentials.g);
    let target = -event
        .iter()
        .map(|&(i, j)| cost.get(i, j) - f0[i] - g0[j])
        .fold(f64::INFINITY, f64::min);

    let mut rows = Vec::with_capacity(schedule.len());
    let mut dropped = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &eps in schedule.values() {
        let sol =
            sinkhorn_solve_from(mu, nu, cost, &settings.config(eps), warm.as_deref()).map_err(|source| {
                LabError::Solver {
                    epsilon: eps,
                    completed: Vec::new(),
                    source,
                }
            })?;
        let log_mass = event_log_mass(&sol.potentials, cost, mu, nu, &event);
        warm = Some(sol.potentials.g);
        if !log_mass.is_finite() {
            dropped.push((eps, format!("log mass {log_mass} is not finite")));
            continue;
        }
        let mass = log_mass.exp();
        let rate = eps * log_mass;
        rows.push(LdpRow {
            eps,
            log_mass,
            mass,
            mass_underflow: mass < f64::MIN_POSITIVE,
            rate,
            gap: (rate - target).abs(),
        });
    }
    Ok(LdpReport {
        event,
        target,
        rows,
        dropped,
        dual_unique_hint: exact.dual_unique_hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{sinkhorn_solve, SinkhornConfig};

    #[test]
    fn single_cell_rate_is_the_log_density() {
        let (mu, nu, c) = crate::random::random_instance(&mut crate::random::rng(5), 4, 5);
        let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(0.3)).unwrap();
        let pp = &sol.potentials;
        let lm = event_log_mass(pp, &c, &mu, &nu, &[(2, 3)]);
        let direct = (pp.f[2] + pp.g[3] - c.get(2, 3)) / 0.3 + (mu.weights()[2] * nu.weights()[3]).ln();
        assert!((lm - direct).abs() <= 1e-12);
    }

    #[test]
    fn full_grid_rate_vanishes() {
        let (mu, nu, c) = crate::random::random_instance(&mut crate::random::rng(6), 5, 5);
        let all: Vec<(usize, usize)> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).collect();
        let s = EpsSchedule::new(1.0, 0.05, 0.5).unwrap();
        let r = ldp_estimate(&mu, &nu, &c, &all, &s, &SolverSettings::default()).unwrap();
        assert!(r.target.abs() <= 1e-12);
        assert!(r.rows.iter().all(|row| row.rate.abs() <= 1e-10));
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn rejects_bad_events() {
        let (mu, nu, c) = crate::random::random_instance(&mut crate::random::rng(6), 3, 3);
        let s = EpsSchedule::new(1.0, 0.5, 0.5).unwrap();
        let cfg = SolverSettings::default();
        assert!(ldp_estimate(&mu, &nu, &c, &[], &s, &cfg).is_err());
        assert!(ldp_estimate(&mu, &nu, &c, &[(3, 0)], &s, &cfg).is_err());
    }
}
