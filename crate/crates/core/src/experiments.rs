//! Built-in reproduction runs over the bundled problem files, and report
//! output as CSV, JSON or markdown tables.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::baseline::{solve_baseline, BaselineConfig, BaselineError};
use crate::geometry::Vector;
use crate::oracles::FunctionOracle;
use crate::problem::{parse_problem, LoadError, LoadedProblem};
use crate::solver::{solve, EtaSchedule, ProblemInstance, SolveError, SolveResult, SolverConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?} (expected one of 5.1, 5.2a, 5.2b, 5.2c, 5.3, 5.4)")]
    UnknownExperiment(String),
    #[error("experiment {0} does not take anchor points")]
    AnchorsNotSupported(ExperimentId),
    #[error("anchor has dimension {found}, problem has {expected}")]
    AnchorDimension { expected: usize, found: usize },
    #[error("report has no rows")]
    EmptyReport,
    #[error("report mixes experiment families")]
    MixedReport,
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    AffineDisc,
    LeastNormSmall,
    LeastNormWide,
    LeastNormInconsistent,
    Distance,
    Portfolio,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::AffineDisc,
        ExperimentId::LeastNormSmall,
        ExperimentId::LeastNormWide,
        ExperimentId::LeastNormInconsistent,
        ExperimentId::Distance,
        ExperimentId::Portfolio,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::AffineDisc => "5.1",
            ExperimentId::LeastNormSmall => "5.2a",
            ExperimentId::LeastNormWide => "5.2b",
            ExperimentId::LeastNormInconsistent => "5.2c",
            ExperimentId::Distance => "5.3",
            ExperimentId::Portfolio => "5.4",
        }
    }

    fn source(&self) -> &'static str {
        match self {
            ExperimentId::AffineDisc => include_str!("../data/ex51.json"),
            ExperimentId::LeastNormSmall => include_str!("../data/ex52a.json"),
            ExperimentId::LeastNormWide => include_str!("../data/ex52b.json"),
            ExperimentId::LeastNormInconsistent => include_str!("../data/ex52c.json"),
            ExperimentId::Distance => include_str!("../data/ex53.json"),
            ExperimentId::Portfolio => include_str!("../data/markowitz.json"),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ExperimentId::AffineDisc => Family::Affine,
            ExperimentId::LeastNormSmall
            | ExperimentId::LeastNormWide
            | ExperimentId::LeastNormInconsistent => Family::LeastNorm,
            ExperimentId::Distance => Family::Distance,
            ExperimentId::Portfolio => Family::Portfolio,
        }
    }

    pub fn takes_anchors(&self) -> bool {
        matches!(self, ExperimentId::Distance | ExperimentId::Portfolio)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, ExperimentError> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

/// Column layout of a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Affine,
    LeastNorm,
    Distance,
    Portfolio,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepEntry {
    pub eps: f64,
    pub eta_base: f64,
}

pub fn bundled_problem(id: ExperimentId) -> Result<LoadedProblem, ExperimentError> {
    Ok(parse_problem(id.source())?)
}

/// Raw text of the bundled problem file.
pub fn bundled_source(id: ExperimentId) -> &'static str {
    id.source()
}

fn grid(eps: &[f64], bases: &[f64]) -> Vec<SweepEntry> {
    eps.iter()
        .flat_map(|&e| bases.iter().map(move |&b| SweepEntry { eps: e, eta_base: b }))
        .collect()
}

pub fn default_sweep(id: ExperimentId) -> Vec<SweepEntry> {
    match id {
        ExperimentId::AffineDisc | ExperimentId::LeastNormSmall | ExperimentId::LeastNormWide => {
            grid(&[1e-5, 1e-7, 1e-9], &[10.0, 100.0, 1000.0])
        }
        ExperimentId::LeastNormInconsistent => grid(&[1e-5], &[10.0, 100.0, 1000.0]),
        ExperimentId::Distance => grid(&[1e-5, 1e-7], &[10.0, 100.0]),
        ExperimentId::Portfolio => grid(&[1e-10], &[100.0]),
    }
}

pub fn default_anchors(id: ExperimentId) -> Option<Vec<Vector>> {
    let v = |xs: &[f64]| Vector::from_column_slice(xs);
    match id {
        ExperimentId::Distance => Some(vec![v(&[0.0, -3.0]), v(&[2.0, 3.0]), v(&[0.0, 3.0])]),
        ExperimentId::Portfolio => {
            let mut e1 = vec![0.0; 8];
            e1[0] = 1.0;
            let mut first_two = vec![0.0; 8];
            first_two[0] = 0.5;
            first_two[1] = 0.5;
            let mut second_last = vec![0.0; 8];
            second_last[1] = 0.5;
            second_last[7] = 0.5;
            Some(vec![v(&e1), v(&first_two), v(&[0.125; 8]), v(&second_last)])
        }
        _ => None,
    }
}

/// Solver settings used for one sweep entry of an experiment.
pub fn experiment_config(loaded: &LoadedProblem, entry: &SweepEntry) -> Result<SolverConfig, ExperimentError> {
    let mut config = SolverConfig::default();
    loaded.defaults.apply(&mut config)?;
    config.threshold_eps = entry.eps;
    config.eta_schedule = EtaSchedule { base: entry.eta_base };
    config.inner.epsilon = config.inner.epsilon.min(entry.eps);
    config.validate()?;
    Ok(config)
}

/// The bundled instance with its objective re-anchored, if an anchor is given.
pub fn instance_for(
    id: ExperimentId,
    loaded: &LoadedProblem,
    anchor: Option<&Vector>,
) -> Result<ProblemInstance, ExperimentError> {
    let mut instance = loaded.instance.clone();
    if let Some(a) = anchor {
        if !id.takes_anchors() {
            return Err(ExperimentError::AnchorsNotSupported(id));
        }
        if a.len() != instance.dim() {
            return Err(ExperimentError::AnchorDimension {
                expected: instance.dim(),
                found: a.len(),
            });
        }
        instance.f = FunctionOracle::squared_distance(a.clone()).map_err(|e| {
            ExperimentError::Solve(SolveError::InvalidProblem(e.to_string()))
        })?;
    }
    Ok(instance)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    SbpLfs,
    Baseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SbpLfs => "SBP-LFS",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: ExperimentId,
    pub method: Method,
    pub eps: f64,
    pub eta_base: Option<f64>,
    pub anchor: Option<Vector>,
    pub solution: Vector,
    pub upper_value: f64,
    pub lower_value: f64,
    pub outer_iterations: usize,
    pub wall_time: Duration,
    pub termination: String,
}

impl ReportRow {
    fn from_result<R>(
        id: ExperimentId,
        method: Method,
        eps: f64,
        eta_base: Option<f64>,
        anchor: Option<&Vector>,
        r: &SolveResult<R>,
    ) -> Self {
        ReportRow {
            experiment: id,
            method,
            eps,
            eta_base,
            anchor: anchor.cloned(),
            solution: r.x_star.clone(),
            upper_value: r.f_star,
            lower_value: r.g_star,
            outer_iterations: r.outer_iterations,
            wall_time: r.wall_time,
            termination: r.termination.label().to_string(),
        }
    }

    /// `||x - a||` for anchored runs, recovered from `0.5 ||x - a||^2`.
    pub fn distance(&self) -> Option<f64> {
        self.anchor.as_ref().map(|a| (&self.solution - a).norm())
    }
}

/// Runs one solve per (sweep entry, anchor) pair, in parallel, and returns
/// rows in sweep-major order.
pub fn run_experiment(
    id: ExperimentId,
    sweep: &[SweepEntry],
    anchors: Option<&[Vector]>,
) -> Result<Vec<ReportRow>, ExperimentError> {
    let loaded = bundled_problem(id)?;
    if anchors.is_some() && !id.takes_anchors() {
        return Err(ExperimentError::AnchorsNotSupported(id));
    }
    let anchor_list: Vec<Option<&Vector>> = match anchors {
        Some(list) => list.iter().map(Some).collect(),
        None => vec![None],
    };
    let jobs: Vec<(SweepEntry, Option<&Vector>)> = anchor_list
        .iter()
        .flat_map(|a| sweep.iter().map(move |e| (*e, *a)))
        .collect();
    jobs.par_iter()
        .map(|(entry, anchor)| {
            let instance = instance_for(id, &loaded, *anchor)?;
            let config = experiment_config(&loaded, entry)?;
            let result = solve(&instance, &config)?;
            Ok(ReportRow::from_result(
                id,
                Method::SbpLfs,
                entry.eps,
                Some(entry.eta_base),
                *anchor,
                &result,
            ))
        })
        .collect()
}

pub fn run_baseline(id: ExperimentId, eps: &[f64]) -> Result<Vec<ReportRow>, ExperimentError> {
    let loaded = bundled_problem(id)?;
    eps.par_iter()
        .map(|&e| {
            let config = BaselineConfig {
                eps: e,
                ..BaselineConfig::default()
            };
            let result = solve_baseline(&loaded.instance, &config)?;
            Ok(ReportRow::from_result(id, Method::Baseline, e, None, None, &result))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ReportOptions {
    /// Adds a wall-time column. Off by default so output is reproducible.
    pub timing: bool,
}

/// Six decimals, switching to scientific notation for small magnitudes.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-3..1e7).contains(&a) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

fn format_vector(v: &Vector) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

enum Cell {
    Text(String),
    Number(f64),
    Count(usize),
    Vector(Vector),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Number(v) => format_number(*v),
            Cell::Count(n) => n.to_string(),
            Cell::Vector(v) => format_vector(v),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let rounded = |v: f64| {
            format_number(v)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null)
        };
        match self {
            Cell::Text(s) => serde_json::Value::String(s.clone()),
            Cell::Number(v) => rounded(*v),
            Cell::Count(n) => serde_json::Value::from(*n),
            Cell::Vector(v) => serde_json::Value::Array(
                v.iter()
                    .map(|x| rounded(format!("{x:.6}").parse().unwrap_or(*x)))
                    .collect(),
            ),
        }
    }
}

fn columns(family: Family) -> &'static [&'static str] {
    match family {
        Family::Affine => &[
            "eps", "eta_base", "method", "solution", "upper_value", "lower_value", "iterations",
            "termination",
        ],
        Family::LeastNorm => &[
            "eps", "eta_base", "solution", "residual", "l1_norm", "iterations", "termination",
        ],
        Family::Distance => &[
            "anchor", "eps", "eta_base", "solution", "distance", "iterations", "termination",
        ],
        Family::Portfolio => &[
            "anchor", "eps", "eta_base", "solution", "upper_value", "lower_value", "iterations",
            "termination",
        ],
    }
}

fn cells(row: &ReportRow, family: Family) -> Vec<Cell> {
    let eta = match row.eta_base {
        Some(b) => Cell::Text(format!("1/{}^k", format_base(b))),
        None => Cell::Text("-".into()),
    };
    let anchor = || match &row.anchor {
        Some(a) => Cell::Vector(a.clone()),
        None => Cell::Text("-".into()),
    };
    let eps = Cell::Text(format!("{:e}", row.eps));
    let sol = Cell::Vector(row.solution.clone());
    let its = Cell::Count(row.outer_iterations);
    let term = Cell::Text(row.termination.clone());
    match family {
        Family::Affine => vec![
            eps,
            eta,
            Cell::Text(row.method.as_str().into()),
            sol,
            Cell::Number(row.upper_value),
            Cell::Number(row.lower_value),
            its,
            term,
        ],
        Family::LeastNorm => vec![
            eps,
            eta,
            sol,
            Cell::Number(row.lower_value),
            Cell::Number(row.upper_value),
            its,
            term,
        ],
        Family::Distance => vec![
            anchor(),
            eps,
            eta,
            sol,
            Cell::Number(row.distance().unwrap_or((2.0 * row.upper_value).sqrt())),
            its,
            term,
        ],
        Family::Portfolio => vec![
            anchor(),
            eps,
            eta,
            sol,
            Cell::Number(row.upper_value),
            Cell::Number(row.lower_value),
            its,
            term,
        ],
    }
}

fn format_base(b: f64) -> String {
    if b.fract() == 0.0 && b.abs() < 1e15 {
        format!("{}", b as i64)
    } else {
        format!("{b}")
    }
}

fn table(rows: &[ReportRow], opts: ReportOptions) -> Result<(Vec<String>, Vec<Vec<Cell>>), ExperimentError> {
    let first = rows.first().ok_or(ExperimentError::EmptyReport)?;
    let family = first.experiment.family();
    if rows.iter().any(|r| r.experiment.family() != family) {
        return Err(ExperimentError::MixedReport);
    }
    let mut header: Vec<String> = columns(family).iter().map(|s| s.to_string()).collect();
    if opts.timing {
        header.push("time_s".into());
    }
    let body = rows
        .iter()
        .map(|r| {
            let mut c = cells(r, family);
            if opts.timing {
                c.push(Cell::Number(r.wall_time.as_secs_f64()));
            }
            c
        })
        .collect();
    Ok((header, body))
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat, opts: ReportOptions) -> Result<String, ExperimentError> {
    let (header, body) = table(rows, opts)?;
    Ok(match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for row in &body {
                w.write_record(row.iter().map(Cell::render))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)
                .expect("csv output is utf-8")
        }
        ReportFormat::Json => {
            let records: Vec<serde_json::Value> = body
                .iter()
                .map(|row| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("experiment".into(), rows[0].experiment.as_str().into());
                    for (name, cell) in header.iter().zip(row) {
                        obj.insert(name.clone(), cell.to_json());
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&records).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => {
            let mut s = format!("| {} |\n", header.join(" | "));
            s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
            for row in &body {
                let text: Vec<String> = row.iter().map(Cell::render).collect();
                s.push_str(&format!("| {} |\n", text.join(" | ")));
            }
            s
        }
    })
}

/// Writes the report via a temporary file in the target directory and an
/// atomic rename.
pub fn emit_report(
    rows: &[ReportRow],
    format: ReportFormat,
    path: impl AsRef<Path>,
    opts: ReportOptions,
) -> Result<(), ExperimentError> {
    let text = render_report(rows, format, opts)?;
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            experiment: ExperimentId::AffineDisc,
            method: Method::SbpLfs,
            eps: 1e-5,
            eta_base: Some(10.0),
            anchor: None,
            solution: Vector::from_element(2, -std::f64::consts::FRAC_1_SQRT_2),
            upper_value: -2.41421356,
            lower_value: 0.0,
            outer_iterations: 12,
            wall_time: Duration::from_millis(3),
            termination: "criterion_met".into(),
        }
    }

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert!(matches!(
            "5.9".parse::<ExperimentId>(),
            Err(ExperimentError::UnknownExperiment(_))
        ));
    }

    #[test]
    fn bundled_files_load() {
        for id in ExperimentId::ALL {
            bundled_problem(id).unwrap();
        }
    }

    #[test]
    fn csv_layout() {
        let text = render_report(&[row()], ReportFormat::Csv, ReportOptions::default()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "eps,eta_base,method,solution,upper_value,lower_value,iterations,termination"
        );
        assert_eq!(
            lines[1],
            "1e-5,1/10^k,SBP-LFS,\"(-0.707107, -0.707107)\",-2.414214,0.000000,12,criterion_met"
        );
    }

    #[test]
    fn markdown_and_json() {
        let md = render_report(&[row()], ReportFormat::Markdown, ReportOptions::default()).unwrap();
        assert!(md.starts_with("| eps | eta_base |"));
        assert_eq!(md.lines().nth(1).unwrap(), "|---|---|---|---|---|---|---|---|");
        let js = render_report(&[row()], ReportFormat::Json, ReportOptions { timing: true }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(v[0]["upper_value"], -2.414214);
        assert_eq!(v[0]["experiment"], "5.1");
        assert!(v[0].get("time_s").is_some());
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(-2.41421356), "-2.414214");
        assert_eq!(format_number(3.441514e-10), "3.441514e-10");
        assert_eq!(format_number(0.0), "0.000000");
    }

    #[test]
    fn empty_and_mixed_reports_rejected() {
        assert!(matches!(
            render_report(&[], ReportFormat::Csv, ReportOptions::default()),
            Err(ExperimentError::EmptyReport)
        ));
        let mut other = row();
        other.experiment = ExperimentId::Portfolio;
        assert!(matches!(
            render_report(&[row(), other], ReportFormat::Csv, ReportOptions::default()),
            Err(ExperimentError::MixedReport)
        ));
    }

    #[test]
    fn anchors_only_where_meaningful() {
        let a = [Vector::zeros(2)];
        assert!(matches!(
            run_experiment(ExperimentId::AffineDisc, &default_sweep(ExperimentId::AffineDisc), Some(&a)),
            Err(ExperimentError::AnchorsNotSupported(_))
        ));
    }
}
