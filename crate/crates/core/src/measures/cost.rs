use super::{DiscreteMeasure, MeasureError};
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

/// Ground cost `c(x, y)` between atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostKernel {
    /// `|x - y|_2^2`
    SquaredEuclidean,
    /// `|x - y|_p` for `p >= 1`.
    PNorm { p: f64 },
    /// `1` if `x != y` (exact coordinate comparison), else `0`.
    OffDiagonalIndicator,
    /// Values given directly, rows indexed by the first measure.
    ExplicitMatrix { matrix: Vec<Vec<f64>> },
}

impl CostKernel {
    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match self {
            CostKernel::SquaredEuclidean => x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
            CostKernel::PNorm { p } => {
                if *p == 1.0 {
                    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum()
                } else {
                    x.iter()
                        .zip(y.iter())
                        .map(|(a, b)| (a - b).abs().powf(*p))
                        .sum::<f64>()
                        .powf(1.0 / p)
                }
            }
            CostKernel::OffDiagonalIndicator => {
                if x == y {
                    0.0
                } else {
                    1.0
                }
            }
            CostKernel::ExplicitMatrix { .. } => {
                panic!("explicit matrices are indexed, not evaluated at points")
            }
        }
    }
}

/// Evaluated cost on an `m x n` atom grid. Entries are finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, MeasureError> {
        for ((row, col), &value) in values.indexed_iter() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MeasureError::InvalidCost { row, col, value });
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MeasureError> {
        Self::new(rows_to_array(rows)?)
    }

    /// `c_ij = value` everywhere.
    pub fn constant(m: usize, n: usize, value: f64) -> Result<Self, MeasureError> {
        Self::new(Array2::from_elem((m, n), value))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, &v| acc.max(v))
    }

    pub fn check_shape(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(), MeasureError> {
        let expected = (mu.len(), nu.len());
        if self.shape() != expected {
            return Err(MeasureError::Shape {
                expected,
                found: self.shape(),
            });
        }
        Ok(())
    }

    /// Entrywise `self + scale * h`.
    pub fn add_scaled(&self, h: ArrayView2<'_, f64>, scale: f64) -> Result<Self, MeasureError> {
        if h.dim() != self.shape() {
            return Err(MeasureError::Shape {
                expected: self.shape(),
                found: h.dim(),
            });
        }
        Self::new(&self.values + &(&h * scale))
    }
}

pub(crate) fn rows_to_array(rows: Vec<Vec<f64>>) -> Result<Array2<f64>, MeasureError> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(m * n);
    for row in rows {
        if row.len() != n {
            return Err(MeasureError::Shape {
                expected: (m, n),
                found: (m, row.len()),
            });
        }
        flat.extend(row);
    }
    Ok(Array2::from_shape_vec((m, n), flat).expect("rectangular rows"))
}

/// Evaluates `kernel` on every atom pair of `mu x nu`.
pub fn build_cost_matrix(
    kernel: &CostKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<CostMatrix, MeasureError> {
    let (m, n) = (mu.len(), nu.len());
    if let CostKernel::ExplicitMatrix { matrix } = kernel {
        let values = rows_to_array(matrix.clone())?;
        if values.dim() != (m, n) {
            return Err(MeasureError::Shape {
                expected: (m, n),
                found: values.dim(),
            });
        }
        return CostMatrix::new(values);
    }
    if let CostKernel::PNorm { p } = kernel {
        if !(p.is_finite() && *p >= 1.0) {
            return Err(MeasureError::InvalidKernel(format!(
                "p-norm needs p >= 1, got {p}"
            )));
        }
    }
    if mu.dim() != nu.dim() {
        return Err(MeasureError::AtomDimension(mu.dim(), nu.dim()));
    }
    let values = Array2::from_shape_fn((m, n), |(i, j)| kernel.eval(mu.atom(i), nu.atom(j)));
    CostMatrix::new(values)
}
