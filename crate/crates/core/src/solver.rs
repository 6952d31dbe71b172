//! Outer loop: lower-level step, level-constrained inner solve, stopping
//! test, and the per-iteration trace.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{DykstraOptions, FeasibleSet, GeometryError, Vector};
use crate::inner::{
    solve_inner, InnerError, InnerMethod, InnerProblem, InnerRoute, DEFAULT_BUDGET,
    DEFAULT_EPSILON, DEFAULT_FEAS_TOL,
};
use crate::lower_step::{lower_level_step_with, LowerStepError, LowerStepParams, LowerStepResult};
use crate::oracles::FunctionOracle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("criterion A needs the optimal lower-level value, but none is known")]
    MissingKnownAlpha,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub name: String,
    pub f: FunctionOracle,
    pub g: FunctionOracle,
    pub set: FeasibleSet,
    pub known_lower_optimum: Option<f64>,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        f: FunctionOracle,
        g: FunctionOracle,
        set: FeasibleSet,
        known_lower_optimum: Option<f64>,
    ) -> Result<Self, SolveError> {
        let p = ProblemInstance {
            name: name.into(),
            f,
            g,
            set,
            known_lower_optimum,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.set.dim();
        if self.f.dim() != n || self.g.dim() != n {
            return Err(SolveError::InvalidProblem(format!(
                "dimensions disagree: f {}, g {}, C {}",
                self.f.dim(),
                self.g.dim(),
                n
            )));
        }
        if !self.g.supports_lower_level() {
            return Err(SolveError::InvalidProblem(format!(
                "{} cannot be a lower-level objective",
                self.g.name()
            )));
        }
        if let Some(a) = self.known_lower_optimum {
            if !a.is_finite() {
                return Err(SolveError::InvalidProblem("known lower optimum must be finite".into()));
            }
        }
        self.set.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaSchedule {
    pub base: f64,
}

impl EtaSchedule {
    pub fn eta(&self, k: usize) -> f64 {
        eta(self, k)
    }
}

impl Default for EtaSchedule {
    fn default() -> Self {
        EtaSchedule { base: 100.0 }
    }
}

/// `base^-k`; `k` counts from 1.
pub fn eta(schedule: &EtaSchedule, k: usize) -> f64 {
    debug_assert!(k >= 1);
    schedule.base.powi(-(k as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Compare the lower value against the known optimum.
    A,
    /// Compare consecutive lower values.
    B,
}

impl std::str::FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" | "a" => Ok(Criterion::A),
            "B" | "b" => Ok(Criterion::B),
            other => Err(format!("unknown criterion {other:?} (expected A or B)")),
        }
    }
}

pub fn should_stop(
    criterion: Criterion,
    alpha_next: f64,
    alpha_k: f64,
    known_alpha: Option<f64>,
    f_next: f64,
    f_k: f64,
    eps: f64,
) -> Result<bool, SolveError> {
    let lower_ok = match criterion {
        Criterion::A => (alpha_next - known_alpha.ok_or(SolveError::MissingKnownAlpha)?).abs() <= eps,
        Criterion::B => (alpha_next - alpha_k).abs() <= eps,
    };
    Ok(lower_ok && (f_next - f_k).abs() <= eps)
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialPoint {
    /// Projection of the origin onto C.
    Auto,
    Given(Vector),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerTolerance {
    Fixed,
    /// `epsilon * ratio^(k-1)`, never below `floor`.
    Decreasing { ratio: f64, floor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    pub epsilon: f64,
    pub budget: usize,
    pub feas_tol: f64,
    pub method: InnerMethod,
    pub tolerance: InnerTolerance,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            epsilon: DEFAULT_EPSILON,
            budget: DEFAULT_BUDGET,
            feas_tol: DEFAULT_FEAS_TOL,
            method: InnerMethod::Auto,
            tolerance: InnerTolerance::Fixed,
        }
    }
}

impl InnerConfig {
    fn epsilon_at(&self, k: usize) -> f64 {
        match self.tolerance {
            InnerTolerance::Fixed => self.epsilon,
            InnerTolerance::Decreasing { ratio, floor } => {
                (self.epsilon * ratio.powi(k as i32 - 1)).max(floor)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub sigma: f64,
    pub beta: f64,
    pub beta_bounds: (f64, f64),
    pub max_backtracks: u32,
    pub eta_schedule: EtaSchedule,
    pub threshold_eps: f64,
    pub inner: InnerConfig,
    pub criterion: Criterion,
    pub max_outer: usize,
    pub x0: InitialPoint,
    pub projection: DykstraOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            sigma: 0.1,
            beta: 1.0,
            beta_bounds: (1e-4, 1e4),
            max_backtracks: 60,
            eta_schedule: EtaSchedule::default(),
            threshold_eps: 1e-5,
            inner: InnerConfig::default(),
            criterion: Criterion::B,
            max_outer: 10_000,
            x0: InitialPoint::Auto,
            projection: DykstraOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: String| Err(SolveError::InvalidConfig(m));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma = {} must lie in (0, 1)", self.sigma));
        }
        let (lo, hi) = self.beta_bounds;
        if !(lo > 0.0 && lo <= hi && self.beta >= lo && self.beta <= hi) {
            return bad(format!("beta = {} must lie in [{lo}, {hi}] with 0 < lower", self.beta));
        }
        if !(self.eta_schedule.base > 1.0 && self.eta_schedule.base.is_finite()) {
            return bad(format!("eta base {} must exceed 1", self.eta_schedule.base));
        }
        if !(self.threshold_eps > 0.0) {
            return bad("threshold eps must be positive".into());
        }
        if !(self.inner.epsilon > 0.0) || !(self.inner.feas_tol >= 0.0) || self.inner.budget == 0 {
            return bad("inner epsilon, feasibility tolerance and budget must be positive".into());
        }
        if let InnerTolerance::Decreasing { ratio, floor } = self.inner.tolerance {
            if !(ratio > 0.0 && ratio <= 1.0 && floor > 0.0) {
                return bad("decreasing inner tolerance needs ratio in (0, 1] and floor > 0".into());
            }
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerStats {
    pub iterations: usize,
    pub f_val: f64,
    pub g_val: f64,
    pub route: InnerRoute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub x_k: Vector,
    pub lower: LowerStepResult,
    pub tau_k: f64,
    pub inner_stats: InnerStats,
    pub eta_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    ArmijoExhausted,
    PositiveDirDeriv,
    NeverFeasible,
    DykstraNoConvergence,
    Numerical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    CriterionMet,
    MaxOuter,
    Error { kind: FailureKind, message: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::CriterionMet => "criterion_met",
            Termination::MaxOuter => "max_outer",
            Termination::Error { .. } => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<R = IterationRecord> {
    pub x_star: Vector,
    pub f_star: f64,
    pub g_star: f64,
    pub alpha_final: f64,
    pub outer_iterations: usize,
    pub wall_time: Duration,
    pub trace: Vec<R>,
    pub termination: Termination,
}

fn lower_failure(e: &LowerStepError) -> Termination {
    let kind = match e {
        LowerStepError::ArmijoExhausted { .. } => FailureKind::ArmijoExhausted,
        LowerStepError::PositiveDirDeriv { .. } => FailureKind::PositiveDirDeriv,
        LowerStepError::Geometry(GeometryError::DykstraNoConvergence { .. }) => {
            FailureKind::DykstraNoConvergence
        }
        _ => FailureKind::Numerical,
    };
    Termination::Error {
        kind,
        message: e.to_string(),
    }
}

fn inner_failure(e: &InnerError) -> Termination {
    let kind = match e {
        InnerError::NeverFeasible { .. } => FailureKind::NeverFeasible,
        InnerError::Geometry(GeometryError::DykstraNoConvergence { .. }) => {
            FailureKind::DykstraNoConvergence
        }
        _ => FailureKind::Numerical,
    };
    Termination::Error {
        kind,
        message: e.to_string(),
    }
}

pub(crate) fn initial_point(
    problem: &ProblemInstance,
    x0: &InitialPoint,
    projection: &DykstraOptions,
) -> Result<Vector, SolveError> {
    let n = problem.dim();
    match x0 {
        InitialPoint::Auto => Ok(problem.set.project_with(&Vector::zeros(n), projection)?),
        InitialPoint::Given(x) => {
            if x.len() != n {
                return Err(SolveError::InvalidConfig(format!(
                    "x0 has dimension {}, problem has {n}",
                    x.len()
                )));
            }
            let p = problem.set.project_with(x, projection)?;
            if (&p - x).norm() > 100.0 * projection.tol * (1.0 + x.norm()) {
                log::warn!("x0 is outside C; using its projection");
            }
            Ok(p)
        }
    }
}

pub fn solve(problem: &ProblemInstance, config: &SolverConfig) -> Result<SolveResult, SolveError> {
    config.validate()?;
    problem.validate()?;
    if config.criterion == Criterion::A && problem.known_lower_optimum.is_none() {
        return Err(SolveError::MissingKnownAlpha);
    }
    let start = Instant::now();
    let (f, g, set) = (&problem.f, &problem.g, &problem.set);
    let params = LowerStepParams {
        beta: config.beta,
        sigma: config.sigma,
        max_backtracks: config.max_backtracks,
        projection: config.projection,
    };

    let mut x = initial_point(problem, &config.x0, &config.projection)?;
    let mut trace = Vec::new();
    let done = |x: Vector, alpha: f64, trace: Vec<IterationRecord>, termination| SolveResult {
        f_star: f.eval(&x),
        g_star: g.eval(&x),
        x_star: x,
        alpha_final: alpha,
        outer_iterations: trace.len(),
        wall_time: start.elapsed(),
        trace,
        termination,
    };

    let mut lower = match lower_level_step_with(g, set, &x, &params) {
        Ok(l) => l,
        Err(e) => {
            let alpha = g.eval(&x);
            return Ok(done(x, alpha, trace, lower_failure(&e)));
        }
    };
    let mut f_x = f.eval(&x);

    for k in 1..=config.max_outer {
        let eta_k = eta(&config.eta_schedule, k);
        let tau_k = lower.alpha + eta_k;
        let inner_problem = InnerProblem {
            f,
            g,
            set,
            tau: tau_k,
            epsilon: config.inner.epsilon_at(k),
            budget: config.inner.budget,
            feas_tol: config.inner.feas_tol,
            method: config.inner.method,
        };
        let inner = match solve_inner(&inner_problem, &lower.y) {
            Ok(r) => r,
            Err(e) => {
                let alpha = lower.alpha;
                return Ok(done(x, alpha, trace, inner_failure(&e)));
            }
        };
        let next_lower = lower_level_step_with(g, set, &inner.x_next, &params);
        log::debug!(
            "k={k} alpha={:.3e} tau={tau_k:.3e} f={:.9} inner={} ({} its)",
            lower.alpha,
            inner.f_val,
            inner.route.as_str(),
            inner.iterations
        );
        trace.push(IterationRecord {
            k,
            x_k: x,
            lower: lower.clone(),
            tau_k,
            inner_stats: InnerStats {
                iterations: inner.iterations,
                f_val: inner.f_val,
                g_val: inner.g_val,
                route: inner.route,
            },
            eta_k,
        });
        let next_lower = match next_lower {
            Ok(l) => l,
            Err(e) => {
                let alpha = inner.g_val;
                return Ok(done(inner.x_next, alpha, trace, lower_failure(&e)));
            }
        };
        let f_next = inner.f_val;
        if k >= 2
            && should_stop(
                config.criterion,
                next_lower.alpha,
                lower.alpha,
                problem.known_lower_optimum,
                f_next,
                f_x,
                config.threshold_eps,
            )?
        {
            return Ok(done(inner.x_next, next_lower.alpha, trace, Termination::CriterionMet));
        }
        x = inner.x_next;
        lower = next_lower;
        f_x = f_next;
    }
    let alpha = lower.alpha;
    Ok(done(x, alpha, trace, Termination::MaxOuter))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    k: usize,
    x_k: &'a [f64],
    z_k: &'a [f64],
    y_k: &'a [f64],
    stationary: bool,
    gamma_k: f64,
    l_k: u32,
    alpha_k: f64,
    dir_deriv: f64,
    eta_k: f64,
    tau_k: f64,
    inner_iterations: usize,
    inner_route: &'static str,
    f_next: f64,
    g_next: f64,
}

impl IterationRecord {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TraceLine {
            k: self.k,
            x_k: self.x_k.as_slice(),
            z_k: self.lower.z.as_slice(),
            y_k: self.lower.y.as_slice(),
            stationary: self.lower.stationary,
            gamma_k: self.lower.gamma,
            l_k: self.lower.l,
            alpha_k: self.lower.alpha,
            dir_deriv: self.lower.dir_deriv,
            eta_k: self.eta_k,
            tau_k: self.tau_k,
            inner_iterations: self.inner_stats.iterations,
            inner_route: self.inner_stats.route.as_str(),
            f_next: self.inner_stats.f_val,
            g_next: self.inner_stats.g_val,
        })
        .expect("trace line serializes")
    }
}

/// One JSON object per line, in iteration order.
pub fn write_trace_jsonl<W: Write>(trace: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut out, &rec.to_json())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
