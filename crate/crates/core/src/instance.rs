//! Instance files.
//!
//! Two-marginal instances carry `[mu]`, `[nu]` (each with `atoms` and
//! optional `weights`, uniform when absent) and `[cost]` (`kind` with its
//! parameters, or `matrix`). Multimarginal instances carry `[[measures]]`
//! and a `[cost]` with `tensor` as nested lists. Either kind may instead be
//! generated from a `[random]` table.

use crate::measures::{build_cost_matrix, CostKernel, CostMatrix, DiscreteMeasure, MeasureError};
use crate::multimarginal::{CostTensor, MultiError, MultiProblem};
use crate::random;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{section}: {message}")]
    Invalid { section: &'static str, message: String },
    #[error("{section}: {source}")]
    Measure {
        section: &'static str,
        source: MeasureError,
    },
    #[error(transparent)]
    Multi(#[from] MultiError),
}

fn invalid(section: &'static str, message: impl Into<String>) -> InstanceError {
    InstanceError::Invalid {
        section,
        message: message.into(),
    }
}

fn in_section(section: &'static str) -> impl Fn(MeasureError) -> InstanceError {
    move |source| InstanceError::Measure { section, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub atoms: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl MeasureSpec {
    fn build(&self, section: &'static str) -> Result<DiscreteMeasure, InstanceError> {
        match &self.weights {
            Some(w) => DiscreteMeasure::new(self.atoms.clone(), w.clone()),
            None => DiscreteMeasure::uniform(self.atoms.clone()),
        }
        .map_err(in_section(section))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<KernelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Nested lists, one nesting level per marginal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<toml::Value>,
}

impl CostSpec {
    pub fn kernel(&self) -> Result<CostKernel, InstanceError> {
        let p = self.p.or(self.params.as_ref().and_then(|q| q.p));
        match (self.kind.as_deref(), &self.matrix) {
            (None | Some("explicit-matrix"), Some(m)) => Ok(CostKernel::ExplicitMatrix { matrix: m.clone() }),
            (Some("explicit-matrix"), None) => Err(invalid("cost", "explicit-matrix needs `matrix`")),
            (Some(_), Some(_)) => Err(invalid(
                "cost",
                "`matrix` is only allowed with kind = \"explicit-matrix\"",
            )),
            (None, None) => Err(invalid("cost", "needs `kind` or `matrix`")),
            (Some(kind), None) => match kind {
                "squared-euclidean" => Ok(CostKernel::SquaredEuclidean),
                "off-diagonal-indicator" => Ok(CostKernel::OffDiagonalIndicator),
                "p-norm" => p
                    .map(|p| CostKernel::PNorm { p })
                    .ok_or_else(|| invalid("cost", "p-norm needs `p`")),
                other => Err(invalid("cost", format!("unknown kind `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomLayout {
    /// Atoms in the unit square with random weights.
    #[default]
    UnitSquare,
    /// Atoms at `(k + 1/2)/m` on the line; weights per `mu_weights`, `nu_weights`.
    #[serde(rename = "grid-1d")]
    Grid1d,
    /// Uniform `n`-point marginals with an iid uniform cost matrix.
    Assignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    #[default]
    Uniform,
    Random,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    #[serde(default)]
    pub layout: RandomLayout,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub mu_weights: WeightRule,
    #[serde(default)]
    pub nu_weights: WeightRule,
    /// Marginal sizes for a random multimarginal problem.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measures: Option<Vec<MeasureSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub cost: CostMatrix,
}

impl InstanceSpec {
    pub fn parse(text: &str) -> Result<Self, InstanceError> {
        toml::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))
    }

    /// Two-marginal instance; `seed` applies when `[random]` gives none.
    pub fn build(&self, seed: u64) -> Result<Instance, InstanceError> {
        if self.measures.is_some() {
            return Err(invalid(
                "measures",
                "a two-marginal run needs [mu] and [nu], not [[measures]]",
            ));
        }
        if let Some(r) = &self.random {
            if self.mu.is_some() || self.nu.is_some() {
                return Err(invalid("random", "give either [random] or [mu]/[nu], not both"));
            }
            return self.build_random(r, r.seed.unwrap_or(seed));
        }
        let mu = self
            .mu
            .as_ref()
            .ok_or_else(|| invalid("mu", "missing"))?
            .build("mu")?;
        let nu = self
            .nu
            .as_ref()
            .ok_or_else(|| invalid("nu", "missing"))?
            .build("nu")?;
        let kernel = self
            .cost
            .as_ref()
            .ok_or_else(|| invalid("cost", "missing"))?
            .kernel()?;
        let cost = build_cost_matrix(&kernel, &mu, &nu).map_err(in_section("cost"))?;
        Ok(Instance { mu, nu, cost })
    }

    fn build_random(&self, r: &RandomSpec, seed: u64) -> Result<Instance, InstanceError> {
        let mut rng = random::rng(seed);
        let sized = |k: usize, name: &str| {
            if k == 0 {
                Err(invalid("random", format!("`{name}` must be >= 1")))
            } else {
                Ok(k)
            }
        };
        match r.layout {
            RandomLayout::UnitSquare => {
                let (mu, nu, cost) = random::random_instance(&mut rng, sized(r.m, "m")?, sized(r.n, "n")?);
                Ok(Instance { mu, nu, cost })
            }
            RandomLayout::Assignment => {
                let (mu, nu, cost) = random::random_assignment_instance(&mut rng, sized(r.n, "n")?);
                Ok(Instance { mu, nu, cost })
            }
            RandomLayout::Grid1d => {
                let (m, n) = (sized(r.m, "m")?, sized(r.n, "n")?);
                let mut side = |k: usize, rule: WeightRule, section| {
                    let xs: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
                    let w = match rule {
                        WeightRule::Uniform => vec![1.0 / k as f64; k],
                        WeightRule::Random => random::random_weights(&mut rng, k),
                    };
                    DiscreteMeasure::on_line(&xs, w).map_err(in_section(section))
                };
                let mu = side(m, r.mu_weights, "mu")?;
                let nu = side(n, r.nu_weights, "nu")?;
                let kernel = match &self.cost {
                    Some(c) => c.kernel()?,
                    None => CostKernel::SquaredEuclidean,
                };
                let cost = build_cost_matrix(&kernel, &mu, &nu).map_err(in_section("cost"))?;
                Ok(Instance { mu, nu, cost })
            }
        }
    }

    /// Multimarginal instance from `[[measures]]` plus a cost tensor, or
    /// from `[random] sizes`.
    pub fn build_multi(&self, seed: u64) -> Result<MultiProblem, InstanceError> {
        if let Some(r) = &self.random {
            if r.sizes.len() < 2 || r.sizes.contains(&0) {
                return Err(invalid("random", "`sizes` needs at least two positive entries"));
            }
            let mut rng = random::rng(r.seed.unwrap_or(seed));
            return Ok(random::random_multi_problem(&mut rng, &r.sizes));
        }
        let specs = match (&self.measures, &self.mu, &self.nu) {
            (Some(ms), None, None) => ms.clone(),
            (None, Some(mu), Some(nu)) => vec![mu.clone(), nu.clone()],
            _ => return Err(invalid("measures", "give [[measures]] (or [mu] and [nu])")),
        };
        let measures: Vec<DiscreteMeasure> = specs
            .iter()
            .map(|s| s.build("measures"))
            .collect::<Result<_, _>>()?;
        let cost = self.cost.as_ref().ok_or_else(|| invalid("cost", "missing"))?;
        let shape: Vec<usize> = measures.iter().map(DiscreteMeasure::len).collect();
        let tensor = match (&cost.tensor, cost.kind.as_deref()) {
            (Some(t), None) => {
                let (found, values) = flatten_nested(t)?;
                if found != shape {
                    return Err(invalid(
                        "cost",
                        format!("tensor shape {found:?} does not match marginal sizes {shape:?}"),
                    ));
                }
                CostTensor::new(shape, values)?
            }
            (None, Some("off-diagonal-indicator")) => CostTensor::from_fn(shape, |idx| {
                let first = measures[0].atom(idx[0]);
                let all_equal = idx.iter().zip(&measures).all(|(&i, m)| m.atom(i) == first);
                if all_equal {
                    0.0
                } else {
                    1.0
                }
            })?,
            (None, Some(other)) => {
                return Err(invalid(
                    "cost",
                    format!("kind `{other}` has no tensor form; give `tensor`"),
                ))
            }
            (Some(_), Some(_)) => return Err(invalid("cost", "give either `tensor` or `kind`")),
            (None, None) => return Err(invalid("cost", "needs `tensor`")),
        };
        Ok(MultiProblem::new(measures, tensor)?)
    }
}

/// Shape and row-major values of a rectangular nested list of numbers.
fn flatten_nested(v: &toml::Value) -> Result<(Vec<usize>, Vec<f64>), InstanceError> {
    fn shape_of(v: &toml::Value) -> Vec<usize> {
        match v {
            toml::Value::Array(a) => {
                let mut s = vec![a.len()];
                if let Some(first) = a.first() {
                    s.extend(shape_of(first));
                }
                s
            }
            _ => Vec::new(),
        }
    }
    fn walk(v: &toml::Value, shape: &[usize], out: &mut Vec<f64>) -> Result<(), InstanceError> {
        match (v, shape.split_first()) {
            (toml::Value::Array(a), Some((&n, rest))) if a.len() == n => {
                a.iter().try_for_each(|x| walk(x, rest, out))
            }
            (toml::Value::Float(x), None) => {
                out.push(*x);
                Ok(())
            }
            (toml::Value::Integer(x), None) => {
                out.push(*x as f64);
                Ok(())
            }
            _ => Err(invalid(
                "cost",
                "tensor must be a rectangular nested list of numbers",
            )),
        }
    }
    let shape = shape_of(v);
    if shape.is_empty() {
        return Err(invalid("cost", "tensor must be a nested list"));
    }
    let mut values = Vec::new();
    walk(v, &shape, &mut values)?;
    Ok((shape, values))
}
