//! Run artifacts: CSV tables, plot series, hashes and the file registry
//! behind the manifest. Every byte written is a function of the inputs.

use eot_core::lab::{ConvergenceReport, LdpReport};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("report has no rows")]
    EmptyReport,
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize {what}: {message}")]
    Serialize { what: String, message: String },
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash in git's object format: `sha256("blob <len>\0" ++ bytes)`.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// A CSV cell.
#[derive(Debug, Clone, Copy)]
pub enum Cell<'a> {
    Float(f64),
    Int(usize),
    Bool(bool),
    Text(&'a str),
}

impl Cell<'_> {
    fn render(&self) -> String {
        match *self {
            Cell::Float(x) => fmt_float(x),
            Cell::Int(k) => k.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.to_owned(),
        }
    }
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<Cell<'_>>]) -> Result<Vec<u8>, OutputError> {
    let fail = |e: csv::Error| OutputError::Serialize {
        what: "csv".into(),
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.iter().map(Cell::render)).map_err(fail)?;
    }
    w.into_inner().map_err(|e| OutputError::Serialize {
        what: "csv".into(),
        message: e.to_string(),
    })
}

pub const CONVERGENCE_COLUMNS: [&str; 8] = [
    "eps",
    "S_eps",
    "I_eps",
    "L1_f",
    "L1_g",
    "gap_to_S0",
    "max_violation",
    "iterations",
];
pub const RANGE_COLUMNS: [&str; 4] = ["f_min", "f_max", "g_min", "g_max"];

/// Convergence rows; `with_ranges` appends the potential ranges.
pub fn convergence_csv(
    rows: &[eot_core::lab::ConvergenceRow],
    with_ranges: bool,
) -> Result<Vec<u8>, OutputError> {
    let mut header: Vec<&str> = CONVERGENCE_COLUMNS.to_vec();
    if with_ranges {
        header.extend(RANGE_COLUMNS);
    }
    let body: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                Cell::Float(r.eps),
                Cell::Float(r.s_eps),
                Cell::Float(r.i_eps),
                Cell::Float(r.l1_f),
                Cell::Float(r.l1_g),
                Cell::Float(r.gap_to_s0),
                Cell::Float(r.max_violation),
                Cell::Int(r.iterations),
            ];
            if with_ranges {
                row.extend([r.f_min, r.f_max, r.g_min, r.g_max].map(Cell::Float));
            }
            row
        })
        .collect();
    csv_bytes(&header, &body)
}

pub fn ldp_csv(report: &LdpReport) -> Result<Vec<u8>, OutputError> {
    let body: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Float(r.eps),
                Cell::Float(r.log_mass),
                Cell::Float(r.mass),
                Cell::Bool(r.mass_underflow),
                Cell::Float(r.rate),
                Cell::Float(report.target),
                Cell::Float(r.gap),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "eps",
            "log_mass",
            "mass",
            "mass_underflow",
            "rate",
            "target",
            "gap",
        ],
        &body,
    )
}

/// Named `(log10 eps, value)` series.
pub trait PlotSource {
    fn series(&self) -> Vec<(&'static str, Vec<(f64, f64)>)>;
    fn is_empty(&self) -> bool;
}

impl PlotSource for ConvergenceReport {
    fn series(&self) -> Vec<(&'static str, Vec<(f64, f64)>)> {
        let metric = |name, get: fn(&eot_core::lab::ConvergenceRow) -> f64| {
            (name, self.rows.iter().map(|r| (r.eps.log10(), get(r))).collect())
        };
        vec![
            metric("S_eps", |r| r.s_eps),
            metric("I_eps", |r| r.i_eps),
            metric("L1_f", |r| r.l1_f),
            metric("L1_g", |r| r.l1_g),
            metric("gap_to_S0", |r| r.gap_to_s0),
            metric("max_violation", |r| r.max_violation),
        ]
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl PlotSource for LdpReport {
    fn series(&self) -> Vec<(&'static str, Vec<(f64, f64)>)> {
        vec![(
            "rate_vs_target",
            self.rows.iter().map(|r| (r.eps.log10(), r.rate)).collect(),
        )]
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One `<name>.dat` per series under `dir`: whitespace-separated columns
/// `log10(eps) value`, one line per row.
pub fn emit_plot_data(report: &dyn PlotSource, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if report.is_empty() {
        return Err(OutputError::EmptyReport);
    }
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, points) in report.series() {
        let path = dir.join(format!("{name}.dat"));
        std::fs::write(&path, series_bytes(&points)).map_err(|source| OutputError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn series_bytes(points: &[(f64, f64)]) -> Vec<u8> {
    let mut s = String::new();
    for &(x, y) in points {
        let _ = writeln!(s, "{} {}", fmt_float(x), fmt_float(y));
    }
    s.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Writes files under one output directory and records what it wrote.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(root).map_err(|source| OutputError::Io {
            path: root.to_owned(),
            source,
        })?;
        Ok(Self {
            root: root.to_owned(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), OutputError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| OutputError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
        std::fs::write(&path, bytes).map_err(|source| OutputError::Io { path, source })?;
        self.record(rel, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), OutputError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| OutputError::Serialize {
            what: rel.into(),
            message: e.to_string(),
        })?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Plot series under `rel_dir`.
    pub fn write_plots(&mut self, rel_dir: &str, report: &dyn PlotSource) -> Result<(), OutputError> {
        let written = emit_plot_data(report, &self.root.join(rel_dir))?;
        for path in written {
            let bytes = std::fs::read(&path).map_err(|source| OutputError::Io {
                path: path.clone(),
                source,
            })?;
            let name = path
                .file_name()
                .expect("series files are named")
                .to_string_lossy();
            self.record(&format!("{rel_dir}/{name}"), &bytes);
        }
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_owned(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Recorded files in path order.
    pub fn files(&self) -> Vec<FileEntry> {
        let mut files = self.files.clone();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eot_core::lab::{run_schedule, CostFamily, EpsSchedule, SolverSettings};
    use eot_core::DiscreteMeasure;

    #[test]
    fn floats_round_trip() {
        for x in [0.5, 1.0, 1e-10, 0.1 + 0.2, -3.25e300, 123456789.125] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(0.5), "0.5");
        assert_eq!(fmt_float(1e-10), "1e-10");
    }

    #[test]
    fn git_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            git_blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn csv_is_plain_and_newline_terminated() {
        let bytes = csv_bytes(&["a", "b"], &[vec![Cell::Float(0.5), Cell::Int(3)]]).unwrap();
        assert_eq!(bytes, b"a,b\n0.5,3\n");
    }

    fn eight_row_report() -> ConvergenceReport {
        let mu = DiscreteMeasure::uniform_on_line(&[0.0, 0.5, 1.0]).unwrap();
        let nu = DiscreteMeasure::uniform_on_line(&[0.25, 0.75]).unwrap();
        let c = eot_core::build_cost_matrix(&eot_core::CostKernel::SquaredEuclidean, &mu, &nu).unwrap();
        let s = EpsSchedule::new(1.0, 1.0 / 128.0, 0.5).unwrap();
        run_schedule(&mu, &nu, &CostFamily::fixed(c), &s, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn convergence_report_gives_six_series() {
        let report = eight_row_report();
        assert_eq!(report.rows.len(), 8);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 8);
            let first: Vec<f64> = text
                .lines()
                .next()
                .unwrap()
                .split(' ')
                .map(|v| v.parse().unwrap())
                .collect();
            assert_eq!(first[0], 0.0);
        }
    }

    #[test]
    fn empty_report_is_rejected() {
        let mut report = eight_row_report();
        report.rows.clear();
        let dir = tempfile::tempdir().unwrap();
        let err = emit_plot_data(&report, dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "report has no rows");
    }

    #[test]
    fn artifact_dir_lists_files_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = ArtifactDir::create(dir.path()).unwrap();
        out.write("b.csv", b"x\n").unwrap();
        out.write("a.json", b"{}\n").unwrap();
        out.write("b.csv", b"y\n").unwrap();
        out.write_plots("plots", &eight_row_report()).unwrap();
        let files = out.files();
        assert_eq!(files.len(), 8);
        assert_eq!(files[0].path, "a.json");
        assert_eq!(files[1].sha256, sha256_hex(b"y\n"));
        assert!(files[2].path.starts_with("plots/"));
    }
}
