//! Experiment configuration files.
//!
//! ```toml
//! [instance]            # inline instance tables, or `path = "file.toml"`
//! [schedule]            # eps_start, eps_end, factor
//! [family]              # kind = "none" | "additive" | "custom"
//! [solver]              # tol, max_iter, gap_tol, parallel
//! [experiment]          # kind, epsilon, event, n, seed, control
//! [[assertions]]        # metric, min, max
//! ```

use crate::Command;
use eot_core::instance::InstanceSpec;
use eot_core::lab::{CostFamily, EpsSchedule, Perturbation, SolverSettings};
use eot_core::CostMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        section,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<toml::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<EpsSchedule>,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub assertions: Vec<AssertionSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    #[default]
    None,
    Additive,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparableBound {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default)]
    pub kind: FamilyKind,
    /// Additive perturbation matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    /// One cost matrix per scheduled epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separable_bound: Option<SeparableBound>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Command>,
    /// Single epsilon for `solve`, and for `mm` without a schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Event cells `[row, col]` for `ldp`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub event: Vec<(usize, usize)>,
    /// Grid size for `example52`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `example52` also runs the squared-euclidean control.
    #[serde(default)]
    pub control: bool,
    /// `mm` also solves the exact problem; defaults to on when small enough.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
}

/// Passes iff `min <= metric <= max` for whichever bounds are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertionSpec {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// A parsed config plus the instance text it refers to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    /// Raw config bytes, hashed into the run id.
    pub raw: Vec<u8>,
    pub instance: Option<LoadedInstance>,
}

#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub spec: InstanceSpec,
    /// File bytes for `path = ...`, canonical TOML for inline tables.
    pub content: Vec<u8>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for a in &config.assertions {
            if a.min.is_none() && a.max.is_none() {
                return Err(invalid(
                    "assertions",
                    format!("`{}` needs `min` or `max`", a.metric),
                ));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let text = String::from_utf8(raw.clone())
            .map_err(|_| ConfigError::Parse(format!("{} is not UTF-8", path.display())))?;
        let config = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let instance = config
            .instance
            .as_ref()
            .map(|v| load_instance(v, base))
            .transpose()?;
        Ok(LoadedConfig {
            config,
            raw,
            instance,
        })
    }

    pub fn schedule(&self) -> Result<&EpsSchedule, ConfigError> {
        self.schedule
            .as_ref()
            .ok_or_else(|| invalid("schedule", "missing"))
    }

    pub fn family(&self, limit: CostMatrix) -> Result<CostFamily, ConfigError> {
        let f = &self.family;
        let matrix = |rows: &Vec<Vec<f64>>| -> Result<Array2<f64>, ConfigError> {
            CostMatrix::from_rows(rows.clone())
                .map(|c| c.values().to_owned())
                .map_err(|e| invalid("family", e.to_string()))
        };
        let perturbation = match f.kind {
            FamilyKind::None => {
                if f.h.is_some() || f.matrices.is_some() {
                    return Err(invalid("family", "kind = \"none\" takes no `h` or `matrices`"));
                }
                Perturbation::None
            }
            FamilyKind::Additive => {
                let h =
                    f.h.as_ref()
                        .ok_or_else(|| invalid("family", "additive needs `h`"))?;
                Perturbation::Additive(matrix(h)?)
            }
            FamilyKind::Custom => {
                let ms = f
                    .matrices
                    .as_ref()
                    .ok_or_else(|| invalid("family", "custom needs `matrices`"))?;
                Perturbation::Custom(ms.iter().map(matrix).collect::<Result<_, _>>()?)
            }
        };
        let family = CostFamily::new(limit, perturbation);
        Ok(match &f.separable_bound {
            Some(b) => family.with_separable_bound(b.c1.clone(), b.c2.clone()),
            None => family,
        })
    }

    /// Solver settings with parallel rows switched on when more than one
    /// worker thread is available.
    pub fn settings(&self, threads: usize) -> SolverSettings {
        SolverSettings {
            parallel: self.solver.parallel || threads > 1,
            ..self.solver
        }
    }
}

fn load_instance(value: &toml::Value, base: &Path) -> Result<LoadedInstance, ConfigError> {
    let table = value
        .as_table()
        .ok_or_else(|| invalid("instance", "must be a table"))?;
    if let Some(p) = table.get("path") {
        if table.len() != 1 {
            return Err(invalid("instance", "`path` excludes inline instance tables"));
        }
        let p = p
            .as_str()
            .ok_or_else(|| invalid("instance", "`path` must be a string"))?;
        let path = base.join(p);
        let content = std::fs::read(&path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        let text = String::from_utf8(content.clone())
            .map_err(|_| ConfigError::Parse(format!("{} is not UTF-8", path.display())))?;
        let spec =
            InstanceSpec::parse(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        return Ok(LoadedInstance { spec, content });
    }
    let spec: InstanceSpec = value
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(format!("[instance] {e}")))?;
    let content = toml::to_string(&spec)
        .map_err(|e| invalid("instance", e.to_string()))?
        .into_bytes();
    Ok(LoadedInstance { spec, content })
}
