//! Unregularized (epsilon = 0) transport: optimal coupling, value and
//! normalized Kantorovich potentials.

pub(crate) mod lp;
mod transport;

use crate::measures::{CostMatrix, Coupling, DiscreteMeasure, MeasureError, PotentialPair};
use crate::sinkhorn::normalize_pair;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use lp::solve_equality_lp;

/// Mass below this is treated as off-support.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Tolerance for tight dual constraints.
pub const TIGHT_TOL: f64 = 1e-9;
const HINT_NOISE: f64 = 1e-9;
const HINT_MATCH: f64 = 1e-7;
const HINT_SEED: u64 = 0x5eed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub coupling: Coupling,
    /// Optimal transport cost (primal and dual agree).
    pub value: f64,
    /// Normalized Kantorovich potentials, `epsilon = 0`.
    pub potentials: PotentialPair,
    /// True when the normalized potentials are provably unique and a
    /// perturbed re-solve reproduces them.
    pub dual_unique_hint: bool,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityDiagnostics {
    /// `max_ij (f_i + g_j - C_ij)`.
    pub max_violation: f64,
    /// `max (C_ij - f_i - g_j)` over cells carrying mass.
    pub slackness_defect: f64,
    /// `<C, pi> - sum mu f - sum nu g`.
    pub gap: f64,
}

fn solve_raw(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<(Coupling, PotentialPair, usize), ExactError> {
    cost.check_shape(mu, nu)?;
    let r = transport::transport_simplex(mu.weights(), nu.weights(), cost.values())?;
    let coupling = Coupling::new(r.flow)?;
    let pp = normalize_pair(&PotentialPair::new(r.u, r.v, 0.0)?, mu, nu);
    Ok((coupling, pp, r.pivots))
}

/// Transportation simplex from a northwest-corner basis.
pub fn solve_exact(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<ExactSolution, ExactError> {
    let (coupling, potentials, pivots) = solve_raw(mu, nu, cost)?;
    let value: f64 = coupling
        .mass()
        .iter()
        .zip(cost.values().iter())
        .map(|(p, c)| p * c)
        .sum();
    let diag = check_optimality(&coupling, &potentials, cost, mu, nu)?;
    let scale = cost.max_abs().max(1.0);
    if diag.max_violation > TIGHT_TOL * scale
        || diag.slackness_defect > TIGHT_TOL * scale
        || diag.gap.abs() > TIGHT_TOL * scale
    {
        return Err(ExactError::Numerical(format!(
            "optimality check failed after {pivots} pivots: {diag:?}"
        )));
    }
    let dual_unique_hint = potentials_structurally_unique(&coupling, &potentials, cost)
        && perturbed_resolve_agrees(mu, nu, cost, &potentials)?;
    Ok(ExactSolution {
        coupling,
        value,
        potentials,
        dual_unique_hint,
        pivots,
    })
}

fn perturbed_resolve_agrees(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    reference: &PotentialPair,
) -> Result<bool, ExactError> {
    let mut rng = ChaCha8Rng::seed_from_u64(HINT_SEED);
    let noise = Array2::from_shape_fn(cost.shape(), |_| rng.random::<f64>());
    let perturbed = cost.add_scaled(noise.view(), HINT_NOISE)?;
    let (_, pp, _) = solve_raw(mu, nu, &perturbed)?;
    let dist = sup_distance(&pp.f, &reference.f).max(sup_distance(&pp.g, &reference.g));
    Ok(dist <= HINT_MATCH)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact uniqueness test for normalized Kantorovich potentials.
///
/// Within a connected component of the support graph the potentials are
/// pinned up to one shared shift. Shifting component `a` by `t_a` (rows `+t`,
/// columns `-t`) keeps the objective and stays feasible iff
/// `t_a - t_b <= C_ij - f_i - g_j` for rows `i` in `a`, columns `j` in `b`.
/// Only constant shifts survive iff the digraph of tight inter-component
/// constraints (`t_a <= t_b`) is strongly connected.
pub fn potentials_structurally_unique(pi: &Coupling, pp: &PotentialPair, cost: &CostMatrix) -> bool {
    let (m, n) = cost.shape();
    let mass = pi.mass();
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..m {
        for j in 0..n {
            if mass[[i, j]] > SUPPORT_TOL {
                let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut label = vec![usize::MAX; m + n];
    let mut components = 0;
    for x in 0..m + n {
        let root = find(&mut parent, x);
        if label[root] == usize::MAX {
            label[root] = components;
            components += 1;
        }
        label[x] = label[root];
    }
    if components == 1 {
        return true;
    }
    let mut edges = vec![Vec::new(); components];
    let scale = cost.max_abs().max(1.0);
    for i in 0..m {
        for j in 0..n {
            let (a, b) = (label[i], label[m + j]);
            if a != b && cost.get(i, j) - pp.f[i] - pp.g[j] <= TIGHT_TOL * scale {
                edges[a].push(b);
            }
        }
    }
    let reach = |edges: &[Vec<usize>]| {
        let mut seen = vec![false; components];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &edges[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    let mut reversed = vec![Vec::new(); components];
    for (a, out) in edges.iter().enumerate() {
        for &b in out {
            reversed[b].push(a);
        }
    }
    reach(&edges) && reach(&reversed)
}

/// Minimum of `(1/n) sum_i C_{i, sigma(i)}` over all permutations.
///
/// Requires square instances with `n <= 8` and uniform marginals, where the
/// permutation matrices are the extreme points of the coupling polytope.
pub fn brute_force_assignment(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<f64, ExactError> {
    let n = mu.len();
    if nu.len() != n || n > 8 {
        return Err(ExactError::Precondition(format!(
            "brute force needs m = n <= 8, got {} x {}",
            n,
            nu.len()
        )));
    }
    let uniform = |m: &DiscreteMeasure| m.weights().iter().all(|&w| (w - 1.0 / n as f64).abs() <= 1e-12);
    if !uniform(mu) || !uniform(nu) {
        return Err(ExactError::Precondition(
            "brute force needs uniform marginals".into(),
        ));
    }
    cost.check_shape(mu, nu)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>();
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

pub fn check_optimality(
    pi: &Coupling,
    pp: &PotentialPair,
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<OptimalityDiagnostics, MeasureError> {
    cost.check_shape(mu, nu)?;
    if pi.shape() != cost.shape() {
        return Err(MeasureError::Shape {
            expected: cost.shape(),
            found: pi.shape(),
        });
    }
    let mut max_violation = f64::NEG_INFINITY;
    let mut slackness_defect = 0.0f64;
    let mut transport = 0.0;
    for ((i, j), &c) in cost.values().indexed_iter() {
        let slack = c - pp.f[i] - pp.g[j];
        max_violation = max_violation.max(-slack);
        let p = pi.mass()[[i, j]];
        if p > SUPPORT_TOL {
            slackness_defect = slackness_defect.max(slack);
        }
        transport += p * c;
    }
    Ok(OptimalityDiagnostics {
        max_violation,
        slackness_defect,
        gap: transport - pp.objective(mu, nu),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformDirection {
    /// From row potentials `f` to `g_j = min_i (C_ij - f_i)`.
    RowsToCols,
    /// From column potentials `g` to `f_i = min_j (C_ij - g_j)`.
    ColsToRows,
}

/// c-transform; the pair `(input, output)` always satisfies `f + g <= C`.
pub fn c_transform(potential: &[f64], cost: &CostMatrix, direction: TransformDirection) -> Vec<f64> {
    let c = cost.values();
    match direction {
        TransformDirection::RowsToCols => c
            .columns()
            .into_iter()
            .map(|col| {
                col.iter()
                    .zip(potential)
                    .map(|(c, f)| c - f)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect(),
        TransformDirection::ColsToRows => c
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(potential)
                    .map(|(c, g)| c - g)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect(),
    }
}
