//! One run: load the config, execute the experiment, evaluate assertions,
//! write artifacts and the manifest.

use crate::config::{Config, ConfigError, LoadedConfig};
use crate::output::{self, ArtifactDir, Cell, FileEntry, OutputError};
use crate::Command;
use eot_core::exact::{check_optimality, solve_exact, ExactError};
use eot_core::instance::{Instance, InstanceError};
use eot_core::lab::{
    example52, example52_control, invariant_audit, ldp_estimate, run_schedule, ConvergenceReport,
    ConvergenceRow, EpsSchedule, LabError, SolverSettings,
};
use eot_core::multimarginal::{mm_exact, mm_sinkhorn_from, MultiError, PotentialFamily, MAX_EXACT_CELLS};
use eot_core::sinkhorn::{sinkhorn_solve, softmin_update};
use eot_core::{Coupling, DiscreteMeasure, PotentialPair};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

/// Failures that stop a run before any result exists. Exit code 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("instance: {0}")]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("config is for `{configured}` but `{requested}` was requested")]
    KindMismatch {
        configured: &'static str,
        requested: &'static str,
    },
    #[error("[{section}] {message}")]
    Missing { section: &'static str, message: String },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides `[experiment] seed`.
    pub seed: Option<u64>,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    AssertionFailed,
    SolverError,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::AssertionFailed => 1,
            RunStatus::SolverError => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverFailure {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// `None` when the run did not produce the metric.
    pub value: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
    pub instance_hash: String,
    pub config: Value,
    pub status: RunStatus,
    pub error: Option<SolverFailure>,
    pub assertions: Vec<AssertionResult>,
    /// Every file written except the manifest itself.
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub metrics: BTreeMap<String, f64>,
    pub manifest: Manifest,
}

/// What an experiment produced before assertions are evaluated.
#[derive(Default)]
struct Executed {
    metrics: BTreeMap<String, f64>,
    details: serde_json::Map<String, Value>,
    failure: Option<SolverFailure>,
}

impl Executed {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_owned(), value);
    }

    fn flag(&mut self, name: &str, value: bool) {
        self.metric(name, if value { 1.0 } else { 0.0 });
    }

    fn detail(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(name.to_owned(), v);
    }
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    settings: SolverSettings,
    seed: u64,
}

impl Context<'_> {
    fn config(&self) -> &Config {
        &self.loaded.config
    }

    fn instance(&self) -> Result<Instance, CliError> {
        let inst = self
            .loaded
            .instance
            .as_ref()
            .ok_or_else(|| missing("instance", "missing"))?;
        Ok(inst.spec.build(self.seed)?)
    }

    fn schedule(&self) -> Result<&EpsSchedule, CliError> {
        Ok(self.config().schedule()?)
    }
}

fn missing(section: &'static str, message: &str) -> CliError {
    CliError::Missing {
        section,
        message: message.to_owned(),
    }
}

pub fn run(opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let loaded = Config::load(&opts.config)?;
    let config = &loaded.config;
    if let Some(kind) = config.experiment.kind {
        if kind != opts.command {
            return Err(CliError::KindMismatch {
                configured: kind.name(),
                requested: opts.command.name(),
            });
        }
    }
    let seed = opts.seed.or(config.experiment.seed).unwrap_or(0);
    let ctx = Context {
        loaded: &loaded,
        settings: config.settings(opts.threads),
        seed,
    };
    let instance_content = match (&loaded.instance, opts.command) {
        (_, Command::Example52) => {
            let n = config
                .experiment
                .n
                .ok_or_else(|| missing("experiment", "example52 needs `n`"))?;
            format!("example52 n = {n} control = {}\n", config.experiment.control).into_bytes()
        }
        (Some(inst), _) => inst.content.clone(),
        (None, _) => return Err(missing("instance", "missing")),
    };
    let instance_hash = output::git_blob_hash(&instance_content);
    let config_sha256 = output::sha256_hex(&loaded.raw);
    let run_id = format!("{}-{}-s{seed}", &config_sha256[..16], &instance_hash[..16]);

    let mut out = ArtifactDir::create(&opts.out)?;
    let executed = match opts.command {
        Command::Solve => solve(&ctx, &mut out)?,
        Command::Exact => exact(&ctx, &mut out)?,
        Command::Converge => converge(&ctx, &mut out)?,
        Command::Ldp => ldp(&ctx, &mut out)?,
        Command::Example52 => example(&ctx, &mut out)?,
        Command::Mm => multi(&ctx, &mut out)?,
    };

    let assertions: Vec<AssertionResult> = config
        .assertions
        .iter()
        .map(|a| {
            let value = executed.metrics.get(&a.metric).copied();
            let passed =
                value.is_some_and(|v| a.min.is_none_or(|lo| v >= lo) && a.max.is_none_or(|hi| v <= hi));
            AssertionResult {
                metric: a.metric.clone(),
                min: a.min,
                max: a.max,
                value,
                passed,
            }
        })
        .collect();
    let status = if executed.failure.is_some() {
        RunStatus::SolverError
    } else if assertions.iter().all(|a| a.passed) {
        RunStatus::Ok
    } else {
        RunStatus::AssertionFailed
    };
    let config_echo = serde_json::to_value(config).map_err(|e| OutputError::Serialize {
        what: "config".into(),
        message: e.to_string(),
    })?;

    out.write_json(
        "summary.json",
        &json!({
            "command": opts.command,
            "seed": seed,
            "instance_hash": instance_hash,
            "config": config_echo,
            "status": status,
            "error": executed.failure,
            "metrics": executed.metrics,
            "details": executed.details,
            "assertions": assertions,
        }),
    )?;
    let manifest = Manifest {
        run_id,
        command: opts.command,
        seed,
        config_sha256,
        instance_hash,
        config: config_echo,
        status,
        error: executed.failure,
        assertions,
        files: out.files(),
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        status,
        metrics: executed.metrics,
        manifest,
    })
}

fn lab_failure(err: LabError) -> Result<(SolverFailure, Vec<ConvergenceRow>), CliError> {
    match err {
        LabError::Solver {
            epsilon,
            completed,
            source,
        } => Ok((
            SolverFailure {
                kind: source.kind().to_owned(),
                epsilon: Some(epsilon),
                message: format!("{source} at eps={epsilon}"),
            },
            completed,
        )),
        LabError::Exact(e) => Ok((exact_failure(&e), Vec::new())),
        other => Err(CliError::Missing {
            section: "experiment",
            message: other.to_string(),
        }),
    }
}

fn exact_failure(e: &ExactError) -> SolverFailure {
    SolverFailure {
        kind: "Exact".into(),
        epsilon: None,
        message: e.to_string(),
    }
}

fn multi_failure(e: &MultiError, epsilon: Option<f64>) -> SolverFailure {
    let kind = match e {
        MultiError::MaxIterExceeded { .. } => "MaxIterExceeded",
        MultiError::NonFinite { .. } => "NonFinite",
        MultiError::TooLarge { .. } => "TooLarge",
        MultiError::Invalid(_) => "Invalid",
        MultiError::Measure(_) => "Measure",
        MultiError::Exact(_) => "Exact",
    };
    let message = match epsilon {
        Some(eps) => format!("{e} at eps={eps}"),
        None => e.to_string(),
    };
    SolverFailure {
        kind: kind.into(),
        epsilon,
        message,
    }
}

fn potentials_csv(sides: &[(&str, &[f64])]) -> Result<Vec<u8>, OutputError> {
    let rows: Vec<Vec<Cell>> = sides
        .iter()
        .flat_map(|&(side, values)| {
            values
                .iter()
                .enumerate()
                .map(move |(i, &v)| vec![Cell::Text(side), Cell::Int(i), Cell::Float(v)])
        })
        .collect();
    output::csv_bytes(&["side", "index", "value"], &rows)
}

fn coupling_csv(pi: &Coupling) -> Result<Vec<u8>, OutputError> {
    let mass = pi.mass();
    let rows: Vec<Vec<Cell>> = mass
        .indexed_iter()
        .map(|((i, j), &p)| vec![Cell::Int(i), Cell::Int(j), Cell::Float(p)])
        .collect();
    output::csv_bytes(&["row", "col", "mass"], &rows)
}

fn write_pair(out: &mut ArtifactDir, pp: &PotentialPair, pi: &Coupling) -> Result<(), OutputError> {
    out.write("potentials.csv", &potentials_csv(&[("f", &pp.f), ("g", &pp.g)])?)?;
    out.write("coupling.csv", &coupling_csv(pi)?)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn solve(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let Instance { mu, nu, cost } = ctx.instance()?;
    let eps = ctx
        .config()
        .experiment
        .epsilon
        .ok_or_else(|| missing("experiment", "solve needs `epsilon`"))?;
    let mut ex = Executed::default();
    let sol = match sinkhorn_solve(&mu, &nu, &cost, &ctx.settings.config(eps)) {
        Ok(sol) => sol,
        Err(e) => {
            ex.failure = Some(SolverFailure {
                kind: e.kind().into(),
                epsilon: Some(eps),
                message: format!("{e} at eps={eps}"),
            });
            return Ok(ex);
        }
    };
    let pp = &sol.potentials;
    let audit = invariant_audit(&sol, &cost, &mu, &nu);
    // `softmin_update` only fails on non-finite output, which a converged
    // solve rules out.
    let fixed_point = softmin_update(&pp.g, &cost, &nu, eps)
        .map(|f| sup_diff(&f, &pp.f))
        .unwrap_or(f64::INFINITY);
    ex.metric("S_eps", sol.dual);
    ex.metric("I_eps", sol.primal);
    ex.metric(
        "duality_gap",
        (sol.primal - sol.dual).abs() / sol.primal.abs().max(1.0),
    );
    ex.metric("residual_row", sol.residuals.0);
    ex.metric("residual_col", sol.residuals.1);
    ex.metric("iterations", sol.iterations as f64);
    ex.metric("fixed_point", fixed_point);
    ex.metric("normalization_f", (mu.integrate(&pp.f) - sol.dual / 2.0).abs());
    ex.metric("normalization_g", (nu.integrate(&pp.g) - sol.dual / 2.0).abs());
    ex.metric("max_violation", eot_core::lab::max_violation(pp, &cost));
    ex.metric("audit_worst_slack", audit.worst_slack());
    ex.flag("audit_passed", audit.all_passed());
    ex.detail("audit", &audit);
    write_pair(out, pp, &sol.coupling)?;
    Ok(ex)
}

fn exact(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let Instance { mu, nu, cost } = ctx.instance()?;
    let mut ex = Executed::default();
    let sol = match solve_exact(&mu, &nu, &cost) {
        Ok(sol) => sol,
        Err(e) => {
            ex.failure = Some(exact_failure(&e));
            return Ok(ex);
        }
    };
    let diag = check_optimality(&sol.coupling, &sol.potentials, &cost, &mu, &nu)
        .map_err(|e| missing("instance", &e.to_string()))?;
    ex.metric("value", sol.value);
    ex.metric("max_violation", diag.max_violation);
    ex.metric("slackness_defect", diag.slackness_defect);
    ex.metric("gap", diag.gap.abs());
    ex.metric("pivots", sol.pivots as f64);
    ex.flag("dual_unique_hint", sol.dual_unique_hint);
    write_pair(out, &sol.potentials, &sol.coupling)?;
    Ok(ex)
}

/// Metrics shared by every convergence-style report.
fn convergence_metrics(ex: &mut Executed, report: &ConvergenceReport, cells: usize) {
    let rows = &report.rows;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let log_cells = (cells as f64).ln();
    ex.metric("rows", rows.len() as f64);
    ex.metric("S0", report.s0);
    ex.flag("dual_unique_hint", report.dual_unique_hint);
    ex.metric(
        "S_eps_max_rise",
        rows.windows(2)
            .map(|w| w[1].s_eps - w[0].s_eps)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    ex.metric(
        "S_eps_min_excess",
        rows.iter()
            .map(|r| r.s_eps - report.s0)
            .fold(f64::INFINITY, f64::min),
    );
    ex.metric(
        "violation_excess",
        rows.iter()
            .map(|r| r.max_violation - r.eps * log_cells)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    ex.metric("final_L1_f", last.l1_f);
    ex.metric("final_L1_g", last.l1_g);
    ex.metric("L1_f_drop", first.l1_f - last.l1_f);
    ex.metric("L1_g_drop", first.l1_g - last.l1_g);
    ex.metric("final_gap_to_S0", last.gap_to_s0);
    ex.detail("s0", report.s0);
    ex.detail("l1_binding", report.l1_binding);
    ex.detail("exact_potentials", &report.exact_potentials);
}

fn converge(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let Instance { mu, nu, cost } = ctx.instance()?;
    let schedule = ctx.schedule()?;
    let family = ctx.config().family(cost)?;
    let cells = mu.len() * nu.len();
    let mut ex = Executed::default();
    match run_schedule(&mu, &nu, &family, schedule, &ctx.settings) {
        Ok(report) => {
            out.write("rows.csv", &output::convergence_csv(&report.rows, false)?)?;
            out.write_plots("plots", &report)?;
            out.write(
                "potentials.csv",
                &potentials_csv(&[
                    ("f", &report.final_potentials.f),
                    ("g", &report.final_potentials.g),
                ])?,
            )?;
            convergence_metrics(&mut ex, &report, cells);
        }
        Err(e) => {
            let (failure, completed) = lab_failure(e)?;
            out.write("rows.csv", &output::convergence_csv(&completed, false)?)?;
            ex.failure = Some(failure);
        }
    }
    Ok(ex)
}

fn example(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let exp = &ctx.config().experiment;
    let n = exp
        .n
        .ok_or_else(|| missing("experiment", "example52 needs `n`"))?;
    let schedule = ctx.schedule()?;
    let mut ex = Executed::default();
    match example52(n, schedule, &ctx.settings) {
        Ok(report) => {
            out.write("rows.csv", &output::convergence_csv(&report.rows, true)?)?;
            out.write_plots("plots", &report)?;
            convergence_metrics(&mut ex, &report, n * n);
            ex.metric("max_deviation_from_half", report.max_deviation_from(0.5));
        }
        Err(e) => {
            let (failure, completed) = lab_failure(e)?;
            out.write("rows.csv", &output::convergence_csv(&completed, true)?)?;
            ex.failure = Some(failure);
            return Ok(ex);
        }
    }
    if exp.control {
        match example52_control(n, schedule, &ctx.settings) {
            Ok(report) => {
                out.write("control.csv", &output::convergence_csv(&report.rows, true)?)?;
                let spread = report
                    .rows
                    .iter()
                    .map(|r| r.f_max - r.f_min)
                    .fold(f64::INFINITY, f64::min);
                ex.metric("control_min_spread", spread);
            }
            Err(e) => {
                let (failure, completed) = lab_failure(e)?;
                out.write("control.csv", &output::convergence_csv(&completed, true)?)?;
                ex.failure = Some(failure);
            }
        }
    }
    Ok(ex)
}

fn ldp(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let Instance { mu, nu, cost } = ctx.instance()?;
    let schedule = ctx.schedule()?;
    let event = &ctx.config().experiment.event;
    if event.is_empty() {
        return Err(missing("experiment", "ldp needs a nonempty `event`"));
    }
    let mut ex = Executed::default();
    let report = match ldp_estimate(&mu, &nu, &cost, event, schedule, &ctx.settings) {
        Ok(r) => r,
        Err(e) => {
            ex.failure = Some(lab_failure(e)?.0);
            return Ok(ex);
        }
    };
    out.write("rows.csv", &output::ldp_csv(&report)?)?;
    ex.metric("target", report.target);
    ex.metric("rows", report.rows.len() as f64);
    ex.metric("dropped", report.dropped.len() as f64);
    ex.flag("dual_unique_hint", report.dual_unique_hint);
    ex.detail("event", &report.event);
    ex.detail("dropped", &report.dropped);
    match report.rows.last() {
        Some(last) => {
            out.write_plots("plots", &report)?;
            ex.metric("final_rate", last.rate);
            ex.metric("final_gap", last.gap);
            ex.flag("final_mass_underflow", last.mass_underflow);
        }
        None => {
            ex.failure = Some(SolverFailure {
                kind: "EmptyReport".into(),
                epsilon: None,
                message: OutputError::EmptyReport.to_string(),
            });
        }
    }
    Ok(ex)
}

fn multi(ctx: &Context, out: &mut ArtifactDir) -> Result<Executed, CliError> {
    let inst = ctx
        .loaded
        .instance
        .as_ref()
        .ok_or_else(|| missing("instance", "missing"))?;
    let problem = inst.spec.build_multi(ctx.seed)?;
    let config = ctx.config();
    let epsilons: Vec<f64> = match (&config.schedule, config.experiment.epsilon) {
        (Some(s), None) => s.values().to_vec(),
        (None, Some(eps)) => vec![eps],
        _ => {
            return Err(missing(
                "experiment",
                "mm needs exactly one of [schedule] or `epsilon`",
            ))
        }
    };
    let mut ex = Executed::default();
    let cells = problem.cost().len();
    let exact_value = if config.experiment.exact.unwrap_or(cells <= MAX_EXACT_CELLS) {
        match mm_exact(&problem) {
            Ok(sol) => {
                ex.metric("exact_value", sol.value);
                Some(sol.value)
            }
            Err(e) => {
                ex.failure = Some(multi_failure(&e, None));
                return Ok(ex);
            }
        }
    } else {
        None
    };

    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut values = Vec::new();
    let mut warm: Option<PotentialFamily> = None;
    for &eps in &epsilons {
        let tol = ctx.settings.tol;
        match mm_sinkhorn_from(&problem, eps, tol, ctx.settings.max_iter, warm.as_ref()) {
            Ok(sol) => {
                let value = sol.dual_objective(&problem);
                let residual = sol.residuals.iter().copied().fold(0.0, f64::max);
                let mut row = vec![
                    Cell::Float(eps),
                    Cell::Float(value),
                    Cell::Float(residual),
                    Cell::Float(sol.family.max_violation(problem.cost())),
                    Cell::Int(sol.iterations),
                ];
                if let Some(v) = exact_value {
                    row.push(Cell::Float(value - v));
                }
                rows.push(row);
                values.push(value);
                ex.metric("final_max_residual", residual);
                warm = Some(sol.family);
            }
            Err(e) => {
                ex.failure = Some(multi_failure(&e, Some(eps)));
                break;
            }
        }
    }
    let mut header = vec![
        "eps",
        "dual_objective",
        "max_residual",
        "max_violation",
        "iterations",
    ];
    if exact_value.is_some() {
        header.push("gap_to_exact");
    }
    out.write("rows.csv", &output::csv_bytes(&header, &rows)?)?;
    if let Some(family) = &warm {
        let names: Vec<String> = (1..=family.potentials.len()).map(|k| format!("f{k}")).collect();
        let sides: Vec<(&str, &[f64])> = names
            .iter()
            .zip(&family.potentials)
            .map(|(n, f)| (n.as_str(), f.as_slice()))
            .collect();
        out.write("potentials.csv", &potentials_csv(&sides)?)?;
    }
    if ex.failure.is_none() {
        let last = *values.last().expect("at least one epsilon");
        ex.metric("rows", values.len() as f64);
        ex.metric("final_dual_objective", last);
        ex.metric(
            "dual_max_rise",
            values
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max),
        );
        if let Some(v) = exact_value {
            ex.metric("final_gap_to_exact", last - v);
        }
    }
    let sizes: Vec<usize> = problem.measures().iter().map(DiscreteMeasure::len).collect();
    ex.detail("sizes", sizes);
    Ok(ex)
}
