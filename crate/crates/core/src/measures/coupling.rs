use super::{marginal_residuals, DiscreteMeasure, MeasureError};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::fmt;

/// A real number or `+inf`, kept apart from floating-point overflow.
///
/// Serializes as a plain number, or as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinity,
}

impl Serialize for ExtendedReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal::Finite(v)),
            Raw::Tag(t) if t == "inf" => Ok(ExtendedReal::Infinity),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "expected number or \"inf\", got {t:?}"
            ))),
        }
    }
}

impl ExtendedReal {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtendedReal::Infinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(*v),
            ExtendedReal::Infinity => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinity => f.write_str("inf"),
        }
    }
}

/// Nonnegative mass matrix. When built through [`Coupling::with_marginals`]
/// the tolerance at which its marginals were verified travels with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    mass: Array2<f64>,
    feasibility_tol: Option<f64>,
}

impl Coupling {
    /// Unchecked against marginals; only nonnegativity is enforced.
    pub fn new(mass: Array2<f64>) -> Result<Self, MeasureError> {
        for ((row, col), &value) in mass.indexed_iter() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MeasureError::InvalidMass { row, col, value });
            }
        }
        Ok(Self {
            mass,
            feasibility_tol: None,
        })
    }

    /// Accepts `mass` only if both L1 marginal residuals are at most `tol`.
    pub fn with_marginals(
        mass: Array2<f64>,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        tol: f64,
    ) -> Result<Self, MeasureError> {
        let mut coupling = Self::new(mass)?;
        let (row, col) = marginal_residuals(&coupling, mu, nu)?;
        if row > tol || col > tol {
            return Err(MeasureError::Infeasible { row, col, tol });
        }
        coupling.feasibility_tol = Some(tol);
        Ok(coupling)
    }

    /// The product coupling `mu (x) nu`.
    pub fn product(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        let mass = Array2::from_shape_fn((mu.len(), nu.len()), |(i, j)| mu.weights()[i] * nu.weights()[j]);
        Self {
            mass,
            feasibility_tol: None,
        }
    }

    pub fn mass(&self) -> ArrayView2<'_, f64> {
        self.mass.view()
    }

    pub fn into_mass(self) -> Array2<f64> {
        self.mass
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mass.dim()
    }

    pub fn feasibility_tol(&self) -> Option<f64> {
        self.feasibility_tol
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Dual potentials `(f, g)` at regularization `epsilon` (`0` for Kantorovich).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialPair {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub normalized: bool,
}

impl PotentialPair {
    pub fn new(f: Vec<f64>, g: Vec<f64>, epsilon: f64) -> Result<Self, MeasureError> {
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite {
                what: "f",
                index: (i, 0),
            });
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite {
                what: "g",
                index: (0, j),
            });
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(MeasureError::InvalidKernel(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            f,
            g,
            epsilon,
            normalized: false,
        })
    }

    pub fn zeros(m: usize, n: usize, epsilon: f64) -> Self {
        Self {
            f: vec![0.0; m],
            g: vec![0.0; n],
            epsilon,
            normalized: false,
        }
    }

    /// `sum mu f - sum nu g`; zero for a normalized pair.
    pub fn normalization_defect(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        mu.integrate(&self.f) - nu.integrate(&self.g)
    }

    /// `sum mu f + sum nu g`.
    pub fn objective(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        mu.integrate(&self.f) + nu.integrate(&self.g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn extended_real_serializes_infinity_as_tag() {
        assert_eq!(toml_value(&ExtendedReal::Infinity), "\"inf\"".to_string());
        assert_eq!(ExtendedReal::Finite(2.5).to_f64(), 2.5);
        assert!(ExtendedReal::Infinity.to_f64().is_infinite());
    }

    fn toml_value(v: &ExtendedReal) -> String {
        #[derive(Serialize)]
        struct W {
            v: ExtendedReal,
        }
        let s = toml::to_string(&W { v: *v }).unwrap();
        s.trim().trim_start_matches("v = ").to_string()
    }

    #[test]
    fn coupling_rejects_negative_mass() {
        assert!(matches!(
            Coupling::new(array![[0.5, -0.1]]),
            Err(MeasureError::InvalidMass { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn feasibility_tolerance_travels_with_value() {
        let mu = DiscreteMeasure::uniform_on_line(&[0.0, 1.0]).unwrap();
        let c = Coupling::with_marginals(array![[0.5, 0.0], [0.0, 0.5]], &mu, &mu, 1e-12).unwrap();
        assert_eq!(c.feasibility_tol(), Some(1e-12));
        let bad = Coupling::with_marginals(array![[1.0, 0.0], [0.0, 0.0]], &mu, &mu, 1e-3);
        assert!(matches!(bad, Err(MeasureError::Infeasible { .. })));
    }

    #[test]
    fn potentials_must_be_finite() {
        assert!(PotentialPair::new(vec![f64::NAN], vec![0.0], 1.0).is_err());
        assert!(PotentialPair::new(vec![0.0], vec![0.0], -1.0).is_err());
    }
}
