use super::LabError;
use crate::measures::CostMatrix;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// Geometric epsilon schedule `eps_start * factor^k`, truncated once it
/// would reach `eps_end`, with `eps_end` itself appended as the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleParams", into = "ScheduleParams")]
pub struct EpsSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub factor: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub eps_start: f64,
    pub eps_end: f64,
    pub factor: f64,
}

impl TryFrom<ScheduleParams> for EpsSchedule {
    type Error = LabError;

    fn try_from(p: ScheduleParams) -> Result<Self, LabError> {
        Self::new(p.eps_start, p.eps_end, p.factor)
    }
}

impl From<EpsSchedule> for ScheduleParams {
    fn from(s: EpsSchedule) -> Self {
        Self {
            eps_start: s.eps_start,
            eps_end: s.eps_end,
            factor: s.factor,
        }
    }
}

/// Values within this relative distance of `eps_end` collapse onto it.
const END_MERGE: f64 = 1e-9;

impl EpsSchedule {
    pub fn new(eps_start: f64, eps_end: f64, factor: f64) -> Result<Self, LabError> {
        let finite = eps_start.is_finite() && eps_end.is_finite() && factor.is_finite();
        if !(finite && eps_end > 0.0 && eps_start > eps_end && factor > 0.0 && factor < 1.0) {
            return Err(LabError::Config(format!(
                "schedule needs eps_start > eps_end > 0 and factor in (0,1); got {eps_start}, {eps_end}, {factor}"
            )));
        }
        let mut values = Vec::new();
        let mut k = 0;
        loop {
            let eps = eps_start * factor.powi(k);
            if eps <= eps_end * (1.0 + END_MERGE) {
                break;
            }
            values.push(eps);
            k += 1;
        }
        values.push(eps_end);
        Ok(Self {
            eps_start,
            eps_end,
            factor,
            values,
        })
    }

    /// Strictly decreasing, at least two entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    None,
    /// `c_eps = c + eps * h`.
    Additive(Array2<f64>),
    /// One explicit matrix per scheduled epsilon, in schedule order.
    Custom(Vec<Array2<f64>>),
}

/// Costs `c_eps` converging to a limit cost along a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFamily {
    limit: CostMatrix,
    perturbation: Perturbation,
    /// `(c1, c2)` with `c_eps(i, j) <= c1[i] + c2[j]`; `None` means the
    /// row-wise maximum over the schedule with `c2 = 0`.
    separable_bound: Option<(Vec<f64>, Vec<f64>)>,
}

impl CostFamily {
    pub fn fixed(limit: CostMatrix) -> Self {
        Self::new(limit, Perturbation::None)
    }

    pub fn new(limit: CostMatrix, perturbation: Perturbation) -> Self {
        Self {
            limit,
            perturbation,
            separable_bound: None,
        }
    }

    pub fn with_separable_bound(mut self, c1: Vec<f64>, c2: Vec<f64>) -> Self {
        self.separable_bound = Some((c1, c2));
        self
    }

    pub fn limit(&self) -> &CostMatrix {
        &self.limit
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    /// `c_eps` at schedule position `k`.
    pub fn cost_at(&self, k: usize, epsilon: f64) -> Result<CostMatrix, LabError> {
        let shape_err = |found: (usize, usize)| {
            LabError::Family(format!(
                "perturbation has shape {found:?}, limit cost has {:?}",
                self.limit.shape()
            ))
        };
        match &self.perturbation {
            Perturbation::None => Ok(self.limit.clone()),
            Perturbation::Additive(h) => {
                if h.dim() != self.limit.shape() {
                    return Err(shape_err(h.dim()));
                }
                Ok(self.limit.add_scaled(h.view(), epsilon)?)
            }
            Perturbation::Custom(ms) => {
                let m = ms.get(k).ok_or_else(|| {
                    LabError::Family(format!(
                        "custom family has {} matrices, schedule needs index {k}",
                        ms.len()
                    ))
                })?;
                if m.dim() != self.limit.shape() {
                    return Err(shape_err(m.dim()));
                }
                Ok(CostMatrix::new(m.clone())?)
            }
        }
    }

    /// Every scheduled cost, after checking the common separable bound and
    /// that `max |c_eps - c|` is nonincreasing along the schedule.
    pub fn validate(&self, schedule: &EpsSchedule) -> Result<Vec<CostMatrix>, LabError> {
        let costs: Vec<CostMatrix> = schedule
            .values()
            .iter()
            .enumerate()
            .map(|(k, &eps)| self.cost_at(k, eps))
            .collect::<Result<_, _>>()?;
        if let Perturbation::Custom(ms) = &self.perturbation {
            if ms.len() != schedule.len() {
                return Err(LabError::Family(format!(
                    "custom family has {} matrices for {} scheduled epsilons",
                    ms.len(),
                    schedule.len()
                )));
            }
        }
        if let Some((c1, c2)) = &self.separable_bound {
            let (m, n) = self.limit.shape();
            if c1.len() != m || c2.len() != n {
                return Err(LabError::Family(format!(
                    "separable bound has lengths ({}, {}), cost is {m}x{n}",
                    c1.len(),
                    c2.len()
                )));
            }
            for (k, c) in costs.iter().enumerate() {
                for ((i, j), &v) in c.values().indexed_iter() {
                    if v > c1[i] + c2[j] {
                        return Err(LabError::Family(format!(
                            "c_eps({i},{j}) = {v} exceeds the separable bound at eps = {}",
                            schedule.values()[k]
                        )));
                    }
                }
            }
        }
        let mut previous = f64::INFINITY;
        for (k, c) in costs.iter().enumerate() {
            let dev = sup_deviation(c, &self.limit);
            if dev > previous {
                return Err(LabError::Family(format!(
                    "max |c_eps - c| grows from {previous} to {dev} at eps = {}",
                    schedule.values()[k]
                )));
            }
            previous = dev;
        }
        Ok(costs)
    }

    /// The bound actually in force: the supplied one, or row maxima over
    /// the schedule with a zero column part.
    pub fn separable_bound(&self, schedule: &EpsSchedule) -> Result<(Vec<f64>, Vec<f64>), LabError> {
        if let Some(b) = &self.separable_bound {
            return Ok(b.clone());
        }
        let (m, n) = self.limit.shape();
        let mut c1 = vec![f64::NEG_INFINITY; m];
        for c in self.validate(schedule)? {
            for ((i, _), &v) in c.values().indexed_iter() {
                c1[i] = c1[i].max(v);
            }
        }
        Ok((c1, vec![0.0; n]))
    }
}

fn sup_deviation(a: &CostMatrix, b: &CostMatrix) -> f64 {
    let mut worst = 0.0f64;
    Zip::from(a.values())
        .and(b.values())
        .for_each(|x, y| worst = worst.max((x - y).abs()));
    worst
}
