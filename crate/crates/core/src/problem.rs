//! JSON problem files: schema, loading with validation, and emission.
//!
//! ```json
//! {
//!   "name": "disc",
//!   "dimension": 2,
//!   "f": { "type": "linear", "c": [1, 1], "d": -1 },
//!   "g": { "type": "dist_to_disc_squared" },
//!   "C": { "type": "intersection", "sets": [
//!     { "type": "ball", "center": [0, 0], "radius_squared": 2 },
//!     { "type": "box", "lower": [-3, -3], "upper": [0.5, 0.5] } ] },
//!   "known_lower_optimum": 0,
//!   "defaults": { "criterion": "B", "threshold_eps": 1e-5 }
//! }
//! ```
//!
//! Matrices are arrays of rows.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FeasibleSet, Sense, Vector};
use crate::oracles::{FunctionOracle, OracleError};
use crate::solver::{Criterion, EtaSchedule, InitialPoint, ProblemInstance, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value at {path}: {message}")]
    Validation { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> LoadError {
    LoadError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Linear {
        c: Vec<f64>,
        #[serde(default)]
        d: f64,
    },
    QuadraticForm {
        a: Vec<Vec<f64>>,
    },
    LeastSquares {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    SquaredDistance {
        anchor: Vec<f64>,
    },
    L1Norm,
    MaxOfAffine {
        pieces: Vec<PieceSpec>,
    },
    DistToDiscSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    WholeSpace,
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius_squared: Option<f64>,
    },
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
        sense: Sense,
    },
    Simplex {
        #[serde(default = "one")]
        total: f64,
    },
    Intersection {
        sets: Vec<SetSpec>,
    },
}

fn one() -> f64 {
    1.0
}

/// Optional solver settings carried by a problem file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl ConfigOverrides {
    pub fn apply(&self, config: &mut SolverConfig) -> Result<(), LoadError> {
        if let Some(v) = self.threshold_eps {
            config.threshold_eps = v;
        }
        if let Some(v) = self.eta_base {
            config.eta_schedule = EtaSchedule { base: v };
        }
        if let Some(c) = &self.criterion {
            config.criterion = c
                .parse::<Criterion>()
                .map_err(|m| invalid("defaults.criterion", m))?;
        }
        if let Some(v) = self.max_outer {
            config.max_outer = v;
        }
        if let Some(v) = self.sigma {
            config.sigma = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.inner_epsilon {
            config.inner.epsilon = v;
        }
        if let Some(v) = self.inner_budget {
            config.inner.budget = v;
        }
        if let Some(v) = self.feas_tol {
            config.inner.feas_tol = v;
        }
        if let Some(x) = &self.x0 {
            config.x0 = InitialPoint::Given(Vector::from_column_slice(x));
        }
        config
            .validate()
            .map_err(|e| invalid("defaults", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: String,
    pub dimension: usize,
    pub f: OracleSpec,
    pub g: OracleSpec,
    #[serde(rename = "C")]
    pub set: SetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_lower_optimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults: Option<ConfigOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// A validated problem together with the settings its file asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedProblem {
    pub instance: ProblemInstance,
    pub defaults: ConfigOverrides,
    pub description: Option<String>,
}

fn vector(values: &[f64], dim: usize, path: &str) -> Result<Vector, LoadError> {
    if values.len() != dim {
        return Err(invalid(path, format!("expected {dim} entries, found {}", values.len())));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("{path}[{i}]"), "not a finite number"));
    }
    Ok(Vector::from_column_slice(values))
}

fn matrix(rows: &[Vec<f64>], ncols: Option<usize>, path: &str) -> Result<DMatrix<f64>, LoadError> {
    if rows.is_empty() {
        return Err(invalid(path, "matrix has no rows"));
    }
    let width = ncols.unwrap_or(rows[0].len());
    for (i, row) in rows.iter().enumerate() {
        vector(row, width, &format!("{path}[{i}]"))?;
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn oracle_error(path: &str, e: OracleError) -> LoadError {
    invalid(path, e.to_string())
}

pub fn build_oracle(spec: &OracleSpec, dim: usize, path: &str) -> Result<FunctionOracle, LoadError> {
    let p = |field: &str| format!("{path}.{field}");
    let oracle = match spec {
        OracleSpec::Linear { c, d } => FunctionOracle::linear(vector(c, dim, &p("c"))?, *d),
        OracleSpec::QuadraticForm { a } => {
            let m = matrix(a, Some(dim), &p("a"))?;
            if m.nrows() != dim {
                return Err(invalid(p("a"), format!("expected {dim} rows, found {}", m.nrows())));
            }
            FunctionOracle::quadratic_form(m)
        }
        OracleSpec::LeastSquares { a, b } => {
            let m = matrix(a, Some(dim), &p("a"))?;
            let bv = vector(b, m.nrows(), &p("b"))?;
            FunctionOracle::least_squares(m, bv)
        }
        OracleSpec::SquaredDistance { anchor } => {
            FunctionOracle::squared_distance(vector(anchor, dim, &p("anchor"))?)
        }
        OracleSpec::L1Norm => FunctionOracle::l1_norm(dim),
        OracleSpec::MaxOfAffine { pieces } => {
            if pieces.is_empty() {
                return Err(invalid(p("pieces"), "needs at least one piece"));
            }
            let mut coeffs = DMatrix::zeros(pieces.len(), dim);
            let mut offsets = Vector::zeros(pieces.len());
            for (i, piece) in pieces.iter().enumerate() {
                let c = vector(&piece.c, dim, &format!("{path}.pieces[{i}].c"))?;
                coeffs.set_row(i, &c.transpose());
                offsets[i] = piece.d;
            }
            FunctionOracle::max_of_affine(coeffs, offsets)
        }
        OracleSpec::DistToDiscSquared => FunctionOracle::dist_to_disc_squared(dim),
    };
    oracle.map_err(|e| oracle_error(path, e))
}

pub fn build_set(spec: &SetSpec, dim: usize, path: &str) -> Result<FeasibleSet, LoadError> {
    let p = |field: &str| format!("{path}.{field}");
    let geo = |e: crate::geometry::GeometryError| invalid(path, e.to_string());
    match spec {
        SetSpec::WholeSpace => Ok(FeasibleSet::whole_space(dim)),
        SetSpec::Box { lower, upper } => {
            FeasibleSet::boxed(vector(lower, dim, &p("lower"))?, vector(upper, dim, &p("upper"))?)
                .map_err(geo)
        }
        SetSpec::Ball {
            center,
            radius,
            radius_squared,
        } => {
            let r = match (radius, radius_squared) {
                (Some(r), None) => *r,
                (None, Some(r2)) if *r2 >= 0.0 => r2.sqrt(),
                (None, Some(_)) => return Err(invalid(p("radius_squared"), "must be nonnegative")),
                _ => return Err(invalid(path, "give exactly one of radius and radius_squared")),
            };
            FeasibleSet::ball(vector(center, dim, &p("center"))?, r).map_err(geo)
        }
        SetSpec::Halfspace { normal, offset, sense } => {
            FeasibleSet::halfspace(vector(normal, dim, &p("normal"))?, *offset, *sense).map_err(geo)
        }
        SetSpec::Simplex { total } => FeasibleSet::simplex(dim, *total).map_err(geo),
        SetSpec::Intersection { sets } => {
            if sets.is_empty() {
                return Err(invalid(p("sets"), "intersection needs at least one member"));
            }
            let members = sets
                .iter()
                .enumerate()
                .map(|(i, s)| build_set(s, dim, &format!("{path}.sets[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            FeasibleSet::intersection(members).map_err(geo)
        }
    }
}

impl ProblemFile {
    pub fn build(&self) -> Result<LoadedProblem, LoadError> {
        let dim = self.dimension;
        if dim == 0 {
            return Err(invalid("dimension", "must be positive"));
        }
        let f = build_oracle(&self.f, dim, "f")?;
        let g = build_oracle(&self.g, dim, "g")?;
        if !g.supports_lower_level() {
            return Err(invalid("g", format!("{} cannot be a lower-level objective", g.name())));
        }
        let set = build_set(&self.set, dim, "C")?;
        set.feasibility_probe()
            .map_err(|e| invalid("C", format!("feasibility probe failed: {e}")))?;
        if let Some(a) = self.known_lower_optimum {
            if !a.is_finite() {
                return Err(invalid("known_lower_optimum", "not a finite number"));
            }
        }
        let defaults = self.defaults.clone().unwrap_or_default();
        defaults.apply(&mut SolverConfig::default())?;
        let instance = ProblemInstance::new(self.name.clone(), f, g, set, self.known_lower_optimum)
            .map_err(|e| invalid("", e.to_string()))?;
        Ok(LoadedProblem {
            instance,
            defaults,
            description: self.description.clone(),
        })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_problem_file(text: &str) -> Result<ProblemFile, LoadError> {
    serde_json::from_str(text).map_err(|e| LoadError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn parse_problem(text: &str) -> Result<LoadedProblem, LoadError> {
    parse_problem_file(text)?.build()
}

pub fn load_problem_file(path: impl AsRef<Path>) -> Result<LoadedProblem, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_problem(&text)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemInstance, LoadError> {
    Ok(load_problem_file(path)?.instance)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn oracle_spec(oracle: &FunctionOracle) -> OracleSpec {
    match oracle {
        FunctionOracle::Linear { c, d } => OracleSpec::Linear {
            c: c.iter().copied().collect(),
            d: *d,
        },
        FunctionOracle::QuadraticForm { a, .. } => OracleSpec::QuadraticForm { a: rows(a) },
        FunctionOracle::LeastSquares { a, b, .. } => OracleSpec::LeastSquares {
            a: rows(a),
            b: b.iter().copied().collect(),
        },
        FunctionOracle::SquaredDistance { anchor } => OracleSpec::SquaredDistance {
            anchor: anchor.iter().copied().collect(),
        },
        FunctionOracle::L1Norm { .. } => OracleSpec::L1Norm,
        FunctionOracle::MaxOfAffine { coeffs, offsets } => OracleSpec::MaxOfAffine {
            pieces: (0..coeffs.nrows())
                .map(|i| PieceSpec {
                    c: coeffs.row(i).iter().copied().collect(),
                    d: offsets[i],
                })
                .collect(),
        },
        FunctionOracle::DistToDiscSquared { .. } => OracleSpec::DistToDiscSquared,
    }
}

pub fn set_spec(set: &FeasibleSet) -> SetSpec {
    let vec = |v: &Vector| v.iter().copied().collect::<Vec<f64>>();
    match set {
        FeasibleSet::WholeSpace { .. } => SetSpec::WholeSpace,
        FeasibleSet::Box { lower, upper } => SetSpec::Box {
            lower: vec(lower),
            upper: vec(upper),
        },
        FeasibleSet::Ball { center, radius } => SetSpec::Ball {
            center: vec(center),
            radius: Some(*radius),
            radius_squared: None,
        },
        FeasibleSet::Halfspace { normal, offset, sense } => SetSpec::Halfspace {
            normal: vec(normal),
            offset: *offset,
            sense: *sense,
        },
        FeasibleSet::Simplex { total, .. } => SetSpec::Simplex { total: *total },
        FeasibleSet::Intersection { sets } => SetSpec::Intersection {
            sets: sets.iter().map(set_spec).collect(),
        },
    }
}

pub fn problem_file(problem: &ProblemInstance) -> ProblemFile {
    ProblemFile {
        name: problem.name.clone(),
        dimension: problem.dim(),
        f: oracle_spec(&problem.f),
        g: oracle_spec(&problem.g),
        set: set_spec(&problem.set),
        known_lower_optimum: problem.known_lower_optimum,
        defaults: None,
        description: None,
    }
}

pub fn emit_problem(problem: &ProblemInstance) -> String {
    serde_json::to_string_pretty(&problem_file(problem)).expect("problem serializes")
}
