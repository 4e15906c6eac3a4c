//! Discrete entropic optimal transport.
//!
//! * [`measures`]: discrete measures, costs, couplings, potentials and the
//!   primal/dual functionals.
//! * [`sinkhorn`]: log-domain Sinkhorn iteration for Schrödinger potentials.
//! * [`exact`]: transportation simplex for the unregularized problem and its
//!   Kantorovich potentials.
//! * [`multimarginal`]: the N-marginal analogues of both solvers.
//! * [`lab`]: epsilon schedules, convergence and large-deviation reports,
//!   invariant audits.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod exact;
pub mod instance;
pub mod lab;
pub mod logsumexp;
pub mod measures;
pub mod multimarginal;
pub mod random;
pub mod sinkhorn;

pub use measures::{
    build_cost_matrix, CostKernel, CostMatrix, Coupling, DiscreteMeasure, ExtendedReal, MeasureError,
    PotentialPair,
};
pub use sinkhorn::{sinkhorn_solve, SinkhornConfig, SinkhornError, SinkhornSolution};
