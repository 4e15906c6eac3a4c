//! Transportation simplex on a dense `m x n` cost.
//!
//! The basis is a spanning tree of the bipartite row/column graph with
//! `m + n - 1` cells. Duals are read off the tree (`u_i + v_j = C_ij` on basic
//! cells, `u_0 = 0`). Entering cells follow the most-negative reduced cost with
//! lexicographic tie-breaking; after a run of degenerate pivots the rule
//! switches to Bland's (first improving cell, lexicographically smallest
//! leaving cell) until the objective strictly decreases again.

use super::ExactError;
use ndarray::{Array2, ArrayView2};

const DEGENERATE_RUN_BEFORE_BLAND: usize = 32;

#[derive(Debug, Clone)]
pub(crate) struct TransportResult {
    pub flow: Array2<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

struct Basis {
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    m: usize,
    n: usize,
}

impl Basis {
    /// Northwest-corner rule. Always produces exactly `m + n - 1` cells,
    /// zero-flow ones included when supply and demand run out together.
    fn northwest(supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            cells.push((i, j));
            flow.push(x);
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (s[i] <= d[j] && i < m - 1) || j == n - 1 {
                d[j] -= x;
                s[i] = 0.0;
                i += 1;
            } else {
                s[i] -= x;
                d[j] = 0.0;
                j += 1;
            }
        }
        debug_assert_eq!(cells.len(), m + n - 1);
        Self { cells, flow, m, n }
    }

    /// Adjacency over nodes `0..m` (rows) and `m..m+n` (columns); each entry
    /// is `(neighbour, basic cell index)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn duals(&self, cost: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>), ExactError> {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + n];
        let mut seen = vec![false; m + n];
        pot[0] = 0.0;
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                let (i, j) = self.cells[k];
                // u_i + v_j = C_ij
                pot[next] = cost[[i, j]] - pot[node];
                seen[next] = true;
                stack.push(next);
            }
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(ExactError::Numerical(format!(
                "basis is not spanning: node {node} unreachable, basis {:?}",
                self.cells
            )));
        }
        Ok((pot[..m].to_vec(), pot[m..].to_vec()))
    }

    /// Basic cells on the tree path from row `p` to column `q`, ordered from
    /// the row end.
    fn path(&self, p: usize, q: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        seen[p] = true;
        let mut queue = std::collections::VecDeque::from([p]);
        let target = self.m + q;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }
}

/// Minimizes `<C, x>` over nonnegative `x` with row sums `supply` and column
/// sums `demand` (equal totals assumed).
pub(crate) fn transport_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: ArrayView2<'_, f64>,
) -> Result<TransportResult, ExactError> {
    let (m, n) = (supply.len(), demand.len());
    assert_eq!(cost.dim(), (m, n));
    let mut basis = Basis::northwest(supply, demand);
    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let rc_tol = 1e-12 * scale;
    let max_pivots = 50 * (m * n + m + n) + 10_000;
    let mut in_basis = Array2::from_elem((m, n), false);
    for &(i, j) in &basis.cells {
        in_basis[[i, j]] = true;
    }

    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    loop {
        let (u, v) = basis.duals(cost)?;
        let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
        let mut entering: Option<((usize, usize), f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[[i, j]] {
                    continue;
                }
                let rc = cost[[i, j]] - u[i] - v[j];
                if rc >= -rc_tol {
                    continue;
                }
                match entering {
                    Some((_, best)) if rc >= best => {}
                    _ => entering = Some(((i, j), rc)),
                }
                if bland {
                    break 'scan;
                }
            }
        }
        let Some(((p, q), _)) = entering else {
            let mut flow = Array2::zeros((m, n));
            for (&(i, j), &x) in basis.cells.iter().zip(&basis.flow) {
                flow[[i, j]] = x.max(0.0);
            }
            return Ok(TransportResult { flow, u, v, pivots });
        };
        if pivots >= max_pivots {
            return Err(ExactError::Numerical(format!(
                "no convergence after {pivots} pivots; basis {:?}",
                basis.cells
            )));
        }

        // Cycle: entering (+), then path cells alternating -, +, -, ...
        let path = basis.path(p, q);
        let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = minus
            .iter()
            .map(|&k| basis.flow[k])
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let leaving = *minus
            .iter()
            .filter(|&&k| basis.flow[k] <= theta)
            .min_by_key(|&&k| basis.cells[k])
            .expect("cycle has a minus cell");

        for &k in &plus {
            basis.flow[k] += theta;
        }
        for &k in &minus {
            basis.flow[k] = (basis.flow[k] - theta).max(0.0);
        }
        let (li, lj) = basis.cells[leaving];
        in_basis[[li, lj]] = false;
        in_basis[[p, q]] = true;
        basis.cells[leaving] = (p, q);
        basis.flow[leaving] = theta;

        pivots += 1;
        if theta > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn northwest_corner_has_spanning_size() {
        let b = Basis::northwest(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(b.cells, vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(b.flow, vec![0.5, 0.0, 0.5]);
        let b = Basis::northwest(&[1.0], &[0.25, 0.25, 0.5]);
        assert_eq!(b.cells.len(), 3);
        let b = Basis::northwest(&[0.2, 0.3, 0.5], &[1.0]);
        assert_eq!(b.cells, vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn solves_swap() {
        let c = array![[1.0, 0.0], [0.0, 1.0]];
        let r = transport_simplex(&[0.5, 0.5], &[0.5, 0.5], c.view()).unwrap();
        assert_eq!(r.flow, array![[0.0, 0.5], [0.5, 0.0]]);
        for ((i, j), &x) in r.flow.indexed_iter() {
            let slack = c[[i, j]] - r.u[i] - r.v[j];
            assert!(slack >= -1e-15);
            if x > 0.0 {
                assert!(slack.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn classic_textbook_instance() {
        // Unbalanced-looking integer data with equal totals, cross-checked
        // against the dense tableau LP.
        let c = array![[8.0, 6.0, 10.0], [9.0, 12.0, 13.0], [14.0, 9.0, 16.0]];
        let s = [20.0, 30.0, 25.0];
        let d = [10.0, 35.0, 30.0];
        let r = transport_simplex(&s, &d, c.view()).unwrap();
        let value: f64 = r.flow.iter().zip(c.iter()).map(|(x, c)| x * c).sum();
        let lp = crate::exact::lp::solve_transport_lp(&s, &d, c.view()).unwrap();
        assert!((value - lp.0).abs() < 1e-9, "{value} vs {}", lp.0);
    }
}
