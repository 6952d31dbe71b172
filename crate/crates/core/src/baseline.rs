//! Regularized projected-gradient baseline for smooth upper levels:
//! `x_{k+1} = P_C(x_k - step * (grad g(x_k) + s_k grad f(x_k)))` with a
//! vanishing weight `s_k`.

use std::time::Instant;

use thiserror::Error;

use crate::geometry::{DykstraOptions, GeometryError, Vector};
use crate::oracles::OracleError;
use crate::solver::{initial_point, FailureKind, InitialPoint, ProblemInstance, SolveError, SolveResult, Termination};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("baseline needs a smooth upper-level objective: {0}")]
    NotSmooth(#[from] OracleError),
    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegSchedule {
    /// `scale / (k + 1)`, non-summable.
    Harmonic { scale: f64 },
    /// `base^-k`.
    Geometric { base: f64 },
}

impl RegSchedule {
    pub fn weight(&self, k: usize) -> f64 {
        match *self {
            RegSchedule::Harmonic { scale } => scale / (k as f64 + 1.0),
            RegSchedule::Geometric { base } => base.powi(-(k as i32)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub step: f64,
    pub reg_schedule: RegSchedule,
    pub eps: f64,
    pub max_iter: usize,
    pub x0: InitialPoint,
    pub projection: DykstraOptions,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            step: 0.5,
            reg_schedule: RegSchedule::Harmonic { scale: 1.0 },
            eps: 1e-5,
            max_iter: 100_000,
            x0: InitialPoint::Auto,
            projection: DykstraOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRecord {
    pub k: usize,
    pub x_k: Vector,
    pub weight: f64,
    pub step_norm: f64,
    pub f_val: f64,
    pub g_val: f64,
}

pub fn solve_baseline(
    problem: &ProblemInstance,
    config: &BaselineConfig,
) -> Result<SolveResult<BaselineRecord>, BaselineError> {
    if !(config.step > 0.0 && config.step.is_finite()) || !(config.eps > 0.0) || config.max_iter == 0 {
        return Err(BaselineError::InvalidConfig(
            "step and eps must be positive and max_iter at least 1".into(),
        ));
    }
    match config.reg_schedule {
        RegSchedule::Harmonic { scale } if !(scale > 0.0) => {
            return Err(BaselineError::InvalidConfig("harmonic scale must be positive".into()))
        }
        RegSchedule::Geometric { base } if !(base > 1.0) => {
            return Err(BaselineError::InvalidConfig("geometric base must exceed 1".into()))
        }
        _ => {}
    }
    problem.validate()?;
    let (f, g, set) = (&problem.f, &problem.g, &problem.set);
    let start = Instant::now();
    let mut x = initial_point(problem, &config.x0, &config.projection)?;
    f.gradient(&x)?;
    let mut trace = Vec::new();
    let mut termination = Termination::MaxOuter;
    for k in 0..config.max_iter {
        let weight = config.reg_schedule.weight(k);
        let direction = g.descent_slope(&x)? + f.gradient(&x)? * weight;
        let next = match set.project_with(&(&x - direction * config.step), &config.projection) {
            Ok(p) => p,
            Err(e) => {
                let kind = match e {
                    GeometryError::DykstraNoConvergence { .. } => FailureKind::DykstraNoConvergence,
                    _ => FailureKind::Numerical,
                };
                termination = Termination::Error {
                    kind,
                    message: e.to_string(),
                };
                break;
            }
        };
        let step_norm = (&next - &x).norm();
        trace.push(BaselineRecord {
            k,
            x_k: x,
            weight,
            step_norm,
            f_val: f.eval(&next),
            g_val: g.eval(&next),
        });
        x = next;
        if step_norm <= config.eps {
            termination = Termination::CriterionMet;
            break;
        }
    }
    let g_star = g.eval(&x);
    Ok(SolveResult {
        f_star: f.eval(&x),
        g_star,
        alpha_final: g_star,
        x_star: x,
        outer_iterations: trace.len(),
        wall_time: start.elapsed(),
        trace,
        termination,
    })
}
