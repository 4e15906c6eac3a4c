//! Experiments along epsilon schedules: convergence of values and
//! potentials to the unregularized limit, large-deviation rates of events,
//! and per-solution invariant audits.

mod audit;
mod convergence;
mod ldp;
mod schedule;

pub use audit::{invariant_audit, invariant_audit_at, AuditCheck, AuditReport};
pub use convergence::{
    example52, example52_control, max_violation, offset_grids, run_schedule, ConvergenceReport,
    ConvergenceRow,
};
pub use ldp::{event_log_mass, ldp_estimate, LdpReport, LdpRow};
pub use schedule::{CostFamily, EpsSchedule, Perturbation, ScheduleParams};

use crate::exact::ExactError;
use crate::measures::MeasureError;
use crate::sinkhorn::{SinkhornConfig, SinkhornError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("invalid cost family: {0}")]
    Family(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("{source} at eps={epsilon}")]
    Solver {
        epsilon: f64,
        /// Rows finished before the failure.
        completed: Vec<ConvergenceRow>,
        source: SinkhornError,
    },
}

/// Sinkhorn settings shared by every epsilon of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub gap_tol: f64,
    pub parallel: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SinkhornConfig::new(1.0);
        Self {
            tol: base.tol,
            max_iter: base.max_iter,
            gap_tol: base.gap_tol,
            parallel: base.parallel,
        }
    }
}

impl SolverSettings {
    pub fn config(&self, epsilon: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon,
            tol: self.tol,
            max_iter: self.max_iter,
            gap_tol: self.gap_tol,
            parallel: self.parallel,
        }
    }
}
