//! Dense two-phase tableau simplex for `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Used for the multimarginal linear program, whose constraint matrix is not
//! a bipartite network. Pivoting follows the same policy as the
//! transportation simplex: Dantzig pricing with lowest-index ties, switching
//! to Bland's rule during runs of degenerate pivots.

use super::ExactError;
use ndarray::{Array2, ArrayView2};

const DEGENERATE_RUN_BEFORE_BLAND: usize = 32;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    /// Multipliers `y` with `c_j - y.A_j >= 0` for every column and `y.b = value`.
    pub duals: Vec<f64>,
}

struct Tableau {
    /// `rows x (cols + rows + 1)`; the last column is the right-hand side.
    t: Array2<f64>,
    basis: Vec<usize>,
    /// Rows whose artificial could not be driven out (redundant constraints).
    dead: Vec<bool>,
    cols: usize,
    rows: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.cols + self.rows
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let width = self.t.ncols();
        let p = self.t[[r, q]];
        for k in 0..width {
            self.t[[r, k]] /= p;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.t[[i, q]];
            if factor == 0.0 {
                continue;
            }
            for k in 0..width {
                let delta = factor * self.t[[r, k]];
                self.t[[i, k]] -= delta;
            }
            self.t[[i, q]] = 0.0;
        }
        self.basis[r] = q;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let width = self.rhs();
        let mut d = cost[..width].to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            for (k, dk) in d.iter_mut().enumerate() {
                *dk -= cb * self.t[[r, k]];
            }
        }
        d
    }

    /// Runs simplex pivots for `cost` (length `cols + rows`), never letting
    /// columns `>= allowed` enter.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<usize, ExactError> {
        let rhs = self.rhs();
        let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
        let rc_tol = 1e-12 * scale;
        let max_pivots = 50 * (self.cols + self.rows) + 10_000;
        let mut degenerate_run = 0;
        let mut pivots = 0;
        loop {
            let d = self.reduced_costs(cost);
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let mut entering: Option<(usize, f64)> = None;
            for (j, &dj) in d.iter().enumerate().take(allowed) {
                if dj >= -rc_tol || self.basis.contains(&j) {
                    continue;
                }
                match entering {
                    Some((_, best)) if dj >= best => {}
                    _ => entering = Some((j, dj)),
                }
                if bland {
                    break;
                }
            }
            let Some((q, _)) = entering else {
                return Ok(pivots);
            };
            if pivots >= max_pivots {
                return Err(ExactError::Numerical(format!(
                    "dense simplex did not converge after {pivots} pivots; basis {:?}",
                    self.basis
                )));
            }
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                if self.dead[r] {
                    continue;
                }
                let a = self.t[[r, q]];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.t[[r, rhs]].max(0.0) / a;
                match leave {
                    Some((lr, best)) if ratio > best || (ratio == best && self.basis[r] > self.basis[lr]) => {
                    }
                    _ => leave = Some((r, ratio)),
                }
            }
            let Some((r, theta)) = leave else {
                return Err(ExactError::Numerical(format!(
                    "unbounded direction at column {q}"
                )));
            };
            self.pivot(r, q);
            pivots += 1;
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
    }
}

pub(crate) fn solve_equality_lp(
    a: ArrayView2<'_, f64>,
    b: &[f64],
    c: &[f64],
) -> Result<LpSolution, ExactError> {
    let (rows, cols) = a.dim();
    assert_eq!(b.len(), rows);
    assert_eq!(c.len(), cols);
    let width = cols + rows + 1;
    let mut t = Array2::zeros((rows, width));
    for r in 0..rows {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[[r, j]] = sign * a[[r, j]];
        }
        t[[r, cols + r]] = 1.0;
        t[[r, width - 1]] = sign * b[r];
    }
    let signs: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut tab = Tableau {
        t,
        basis: (cols..cols + rows).collect(),
        dead: vec![false; rows],
        cols,
        rows,
    };

    // Phase I: minimize the sum of artificials.
    let mut phase1 = vec![0.0; cols + rows];
    phase1[cols..].iter_mut().for_each(|v| *v = 1.0);
    tab.optimize(&phase1, cols)?;
    let infeasibility: f64 = (0..rows)
        .filter(|&r| tab.basis[r] >= cols)
        .map(|r| tab.t[[r, width - 1]])
        .sum();
    let b_scale = b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if infeasibility > 1e-9 * b_scale {
        return Err(ExactError::Numerical(format!(
            "linear program infeasible (phase I residual {infeasibility:e})"
        )));
    }
    // Drive remaining artificials out of the basis.
    for r in 0..rows {
        if tab.basis[r] < cols {
            continue;
        }
        let q = (0..cols)
            .filter(|j| !tab.basis.contains(j))
            .find(|&j| tab.t[[r, j]].abs() > PIVOT_TOL);
        match q {
            Some(q) => tab.pivot(r, q),
            None => tab.dead[r] = true,
        }
    }

    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, rows));
    tab.optimize(&phase2, cols)?;

    let mut x = vec![0.0; cols];
    for r in 0..rows {
        if tab.basis[r] < cols {
            x[tab.basis[r]] = tab.t[[r, width - 1]].max(0.0);
        }
    }
    // y_r = c_B B^{-1} e_r, and column cols + r of the tableau is B^{-1} e_r.
    let duals: Vec<f64> = (0..rows)
        .map(|r| {
            let y: f64 = (0..rows)
                .map(|k| phase2[tab.basis[k]] * tab.t[[k, cols + r]])
                .sum();
            y * signs[r]
        })
        .collect();
    let value = x.iter().zip(c).map(|(x, c)| x * c).sum();
    Ok(LpSolution { value, x, duals })
}

/// The transportation problem through the dense solver, returning
/// `(value, row duals, column duals)`. Test-only cross-check.
#[cfg(test)]
pub(crate) fn solve_transport_lp(
    supply: &[f64],
    demand: &[f64],
    cost: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>), ExactError> {
    let (m, n) = cost.dim();
    let mut a = Array2::zeros((m + n, m * n));
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let k = i * n + j;
            a[[i, k]] = 1.0;
            a[[m + j, k]] = 1.0;
            c[k] = cost[[i, j]];
        }
    }
    let b: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let sol = solve_equality_lp(a.view(), &b, &c)?;
    Ok((sol.value, sol.duals[..m].to_vec(), sol.duals[m..].to_vec()))
}
