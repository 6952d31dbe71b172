//! Inner solver for the level-constrained subproblem
//! `min f(x) s.t. g(x) <= tau, x in C`.
//!
//! Three routes are available. When `f` is a squared distance and the
//! sublevel set of `g` is itself projectable, the subproblem is a single
//! projection onto an intersection. Otherwise a primal-dual hybrid gradient
//! method works on the splitting `G(x) + sum_b F_b(K_b x)`, where `G` is the
//! prox-friendly part of `f` and the blocks carry the remaining set
//! constraints and the level constraint. A switching subgradient method is
//! kept for problems neither route can represent.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{project_simplex, DykstraOptions, FeasibleSet, GeometryError, Vector};
use crate::oracles::{FunctionOracle, LevelSet, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("no point with g <= {tau:e} found (least g seen {best_g:e})")]
    NeverFeasible { tau: f64, best_g: f64 },
    #[error("inner problem not supported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InnerMethod {
    /// Projection when possible, then primal-dual, then switching subgradient.
    #[default]
    Auto,
    PrimalDual,
    SwitchingSubgradient,
}

/// Which route produced an inner result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerRoute {
    Projection,
    PrimalDual,
    SwitchingSubgradient,
}

impl InnerRoute {
    pub fn as_str(&self) -> &'static str {
        match self {
            InnerRoute::Projection => "projection",
            InnerRoute::PrimalDual => "primal_dual",
            InnerRoute::SwitchingSubgradient => "switching_subgradient",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InnerProblem<'a> {
    pub f: &'a FunctionOracle,
    pub g: &'a FunctionOracle,
    pub set: &'a FeasibleSet,
    pub tau: f64,
    pub epsilon: f64,
    pub budget: usize,
    pub feas_tol: f64,
    pub method: InnerMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerResult {
    pub x_next: Vector,
    pub f_val: f64,
    pub g_val: f64,
    pub iterations: usize,
    pub best_feasible_found: bool,
    pub route: InnerRoute,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_BUDGET: usize = 50_000;
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;

pub fn solve_inner(problem: &InnerProblem, warm_start: &Vector) -> Result<InnerResult, InnerError> {
    let n = problem.set.dim();
    for (what, d) in [("f", problem.f.dim()), ("g", problem.g.dim()), ("warm start", warm_start.len())] {
        if d != n {
            return Err(InnerError::Unsupported(format!(
                "{what} has dimension {d}, set has dimension {n}"
            )));
        }
    }
    match problem.method {
        InnerMethod::SwitchingSubgradient => switching_subgradient(problem, warm_start),
        InnerMethod::PrimalDual => primal_dual(problem, warm_start),
        InnerMethod::Auto => {
            if let Some(result) = projection_route(problem, warm_start)? {
                return Ok(result);
            }
            match primal_dual(problem, warm_start) {
                Err(InnerError::Unsupported(reason)) => {
                    log::debug!("primal-dual route unavailable ({reason}); using subgradient steps");
                    switching_subgradient(problem, warm_start)
                }
                other => other,
            }
        }
    }
}

fn finish(
    problem: &InnerProblem,
    x: Vector,
    iterations: usize,
    route: InnerRoute,
) -> InnerResult {
    InnerResult {
        f_val: problem.f.eval(&x),
        g_val: problem.g.eval(&x),
        x_next: x,
        iterations,
        best_feasible_found: true,
        route,
    }
}

/// Turns an approximate solution into a feasible one. The candidate is
/// projected onto C; if it still violates the level constraint, the
/// segment towards a strictly feasible warm start is bisected. The result
/// is whichever feasible point has the lower objective.
fn restore(problem: &InnerProblem, candidate: &Vector, warm: &Vector) -> Result<Vector, InnerError> {
    let (f, g, tau) = (problem.f, problem.g, problem.tau);
    let x_c = problem.set.project(candidate)?;
    let g_c = g.eval(&x_c);
    let warm_ok = g.eval(warm) <= tau && problem.set.violation(warm) <= problem.feas_tol;
    let restored = if g_c <= tau {
        Some(x_c)
    } else if warm_ok {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if g.eval(&(warm + (&x_c - warm) * mid)) <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(warm + (&x_c - warm) * lo)
    } else if g_c <= tau + problem.feas_tol {
        Some(x_c)
    } else {
        None
    };
    match restored {
        Some(x) if warm_ok && f.eval(warm) < f.eval(&x) => Ok(warm.clone()),
        Some(x) => Ok(x),
        None if warm_ok => Ok(warm.clone()),
        None => Err(InnerError::NeverFeasible {
            tau,
            best_g: g_c.min(g.eval(warm)),
        }),
    }
}

fn projection_route(problem: &InnerProblem, warm: &Vector) -> Result<Option<InnerResult>, InnerError> {
    let FunctionOracle::SquaredDistance { anchor } = problem.f else {
        return Ok(None);
    };
    let level = match problem.g.level_set(problem.tau) {
        Some(LevelSet::Direct(s)) => s,
        Some(LevelSet::Empty) => {
            return Err(InnerError::NeverFeasible {
                tau: problem.tau,
                best_g: problem.g.eval(warm),
            })
        }
        _ => return Ok(None),
    };
    let target = FeasibleSet::intersection(vec![problem.set.clone(), level])?;
    let opts = DykstraOptions {
        tol: 1e-13,
        max_sweeps: 100_000,
    };
    match target.project_with(anchor, &opts) {
        Ok(p) => {
            let x = restore(problem, &p, warm)?;
            Ok(Some(finish(problem, x, 1, InnerRoute::Projection)))
        }
        Err(GeometryError::DykstraNoConvergence { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// Primal-dual hybrid gradient

enum ProxKind {
    /// `f` is handled entirely by a dual block.
    Zero,
    Linear(Vector),
    SquaredDistance(Vector),
    L1,
    /// `<x, Q x> - 2 <q, x>` up to a constant; prox needs `(I + 2tQ)^-1`.
    Quadratic {
        q_mat: DMatrix<f64>,
        q_vec: Vector,
        cache: Option<(f64, Cholesky<f64, Dyn>)>,
    },
    Disc,
}

struct PrimalProx {
    kind: ProxKind,
    absorbed: Option<FeasibleSet>,
}

impl PrimalProx {
    fn can_absorb(&self, set: &FeasibleSet) -> bool {
        match self.kind {
            ProxKind::Zero | ProxKind::Linear(_) | ProxKind::SquaredDistance(_) => true,
            ProxKind::L1 => matches!(set, FeasibleSet::Box { .. }),
            _ => false,
        }
    }

    fn prox(&mut self, v: &Vector, t: f64) -> Vector {
        let out = match &mut self.kind {
            ProxKind::Zero => v.clone(),
            ProxKind::Linear(c) => v - &*c * t,
            ProxKind::SquaredDistance(a) => (v + &*a * t) / (1.0 + t),
            ProxKind::L1 => v.map(|vi| vi.signum() * (vi.abs() - t).max(0.0)),
            ProxKind::Quadratic { q_mat, q_vec, cache } => {
                if cache.as_ref().map(|(ct, _)| *ct != t).unwrap_or(true) {
                    let n = q_mat.nrows();
                    let m = DMatrix::identity(n, n) + &*q_mat * (2.0 * t);
                    let chol = Cholesky::new(m).expect("I + 2tQ is positive definite");
                    *cache = Some((t, chol));
                }
                let (_, chol) = cache.as_ref().unwrap();
                chol.solve(&(v + &*q_vec * (2.0 * t)))
            }
            ProxKind::Disc => {
                let r = v.norm();
                if r <= 1.0 {
                    v.clone()
                } else {
                    v * ((r + 2.0 * t) / (1.0 + 2.0 * t) / r)
                }
            }
        };
        match &self.absorbed {
            Some(set) => set.project(&out).expect("absorbed set is primitive"),
            None => out,
        }
    }
}

enum DualKind {
    /// Indicator of a primitive set.
    Indicator(FeasibleSet),
    /// `u -> weight * max_i (u_i + shift_i)`.
    MaxAffine { weight: f64, shift: Vector },
}

struct Block {
    op: Option<DMatrix<f64>>,
    kind: DualKind,
    y: Vector,
}

impl Block {
    fn new(op: Option<DMatrix<f64>>, kind: DualKind, n: usize) -> Self {
        let m = op.as_ref().map(|k| k.nrows()).unwrap_or(n);
        Block {
            op,
            kind,
            y: Vector::zeros(m),
        }
    }

    fn apply(&self, x: &Vector) -> Vector {
        match &self.op {
            Some(k) => k * x,
            None => x.clone(),
        }
    }

    fn apply_t(&self, y: &Vector) -> Vector {
        match &self.op {
            Some(k) => k.tr_mul(y),
            None => y.clone(),
        }
    }

    /// Prox of `s F*` via the Moreau identity.
    fn dual_prox(&self, v: &Vector, s: f64) -> Vector {
        match &self.kind {
            DualKind::Indicator(set) => {
                let p = set.project(&(v / s)).expect("block sets are primitive");
                v - p * s
            }
            DualKind::MaxAffine { weight, shift } => project_simplex(&(v + shift * s), *weight),
        }
    }
}

fn spectral_norm(k: &DMatrix<f64>) -> f64 {
    let gram = k.tr_mul(k);
    SymmetricEigen::new(gram).eigenvalues.max().max(0.0).sqrt()
}

fn primitive_members(set: &FeasibleSet) -> Vec<FeasibleSet> {
    match set {
        FeasibleSet::WholeSpace { .. } => Vec::new(),
        FeasibleSet::Intersection { sets } => sets.iter().flat_map(primitive_members).collect(),
        other => vec![other.clone()],
    }
}

fn scaled_ball(center: &Vector, radius: f64, by: f64) -> FeasibleSet {
    FeasibleSet::Ball {
        center: center / by,
        radius: radius / by,
    }
}

fn build_splitting(problem: &InnerProblem) -> Result<(PrimalProx, Vec<Block>), InnerError> {
    let n = problem.set.dim();
    let mut blocks = Vec::new();
    let kind = match problem.f {
        FunctionOracle::Linear { c, .. } => ProxKind::Linear(c.clone()),
        FunctionOracle::SquaredDistance { anchor } => ProxKind::SquaredDistance(anchor.clone()),
        FunctionOracle::L1Norm { .. } => ProxKind::L1,
        FunctionOracle::QuadraticForm { a, .. } => ProxKind::Quadratic {
            q_mat: a.clone(),
            q_vec: Vector::zeros(n),
            cache: None,
        },
        FunctionOracle::LeastSquares { a, b, .. } => ProxKind::Quadratic {
            q_mat: a.tr_mul(a),
            q_vec: a.tr_mul(b),
            cache: None,
        },
        FunctionOracle::DistToDiscSquared { .. } => ProxKind::Disc,
        FunctionOracle::MaxOfAffine { coeffs, offsets } => {
            let norm = spectral_norm(coeffs);
            if norm > 0.0 {
                blocks.push(Block::new(
                    Some(coeffs / norm),
                    DualKind::MaxAffine {
                        weight: norm,
                        shift: offsets / norm,
                    },
                    n,
                ));
            }
            ProxKind::Zero
        }
    };
    let mut prox = PrimalProx { kind, absorbed: None };

    let mut members = primitive_members(problem.set);
    if let Some(pos) = members.iter().position(|m| prox.can_absorb(m)) {
        prox.absorbed = Some(members.remove(pos));
    }
    for m in members {
        blocks.push(Block::new(None, DualKind::Indicator(m), n));
    }

    match problem.g.level_set(problem.tau) {
        None => {
            return Err(InnerError::Unsupported(format!(
                "sublevel sets of {} are not representable",
                problem.g.name()
            )))
        }
        Some(LevelSet::Empty) => {
            return Err(InnerError::NeverFeasible {
                tau: problem.tau,
                best_g: f64::NAN,
            })
        }
        Some(LevelSet::Direct(s)) => {
            for m in primitive_members(&s) {
                blocks.push(Block::new(None, DualKind::Indicator(m), n));
            }
        }
        Some(LevelSet::Ellipsoid { r, center, radius }) => {
            let norm = spectral_norm(&r);
            blocks.push(Block::new(
                Some(&r / norm),
                DualKind::Indicator(scaled_ball(&center, radius, norm)),
                n,
            ));
        }
    }
    Ok((prox, blocks))
}

fn primal_dual(problem: &InnerProblem, warm: &Vector) -> Result<InnerResult, InnerError> {
    let (mut prox, mut blocks) = match build_splitting(problem) {
        Err(InnerError::NeverFeasible { tau, .. }) => {
            return Err(InnerError::NeverFeasible {
                tau,
                best_g: problem.g.eval(warm),
            })
        }
        other => other?,
    };
    let n = warm.len();
    if blocks.is_empty() {
        // Nothing but G is left; run the proximal point iteration on it.
        let mut x = warm.clone();
        let mut iterations = 0;
        for it in 0..problem.budget {
            let next = prox.prox(&x, 1.0);
            iterations = it + 1;
            let moved = (&next - &x).norm();
            x = next;
            if moved <= problem.epsilon * 1e-3 * (1.0 + x.norm()) {
                break;
            }
        }
        let x = restore(problem, &x, warm)?;
        return Ok(finish(problem, x, iterations, InnerRoute::PrimalDual));
    }

    let mut gram = DMatrix::<f64>::zeros(n, n);
    for b in &blocks {
        match &b.op {
            Some(k) => gram += k.tr_mul(k),
            None => gram += DMatrix::<f64>::identity(n, n),
        }
    }
    let lip = SymmetricEigen::new(gram).eigenvalues.max().max(1e-300).sqrt();
    let mut t = 0.95 / lip;
    let mut s = 0.95 / lip;
    let (mut adapt, adapt_decay, balance) = (0.5, 0.95, 1.5);
    let tol = problem.epsilon * 1e-3;

    let mut x = warm.clone();
    let mut kty = Vector::zeros(n);
    for b in &blocks {
        kty += b.apply_t(&b.y);
    }
    let mut iterations = 0;
    for it in 0..problem.budget {
        iterations = it + 1;
        let x_new = prox.prox(&(&x - &kty * t), t);
        let x_bar = &x_new * 2.0 - &x;
        let dx = &x - &x_new;
        let mut kty_new = Vector::zeros(n);
        let mut dual_sq = 0.0;
        let mut dy_kt = Vector::zeros(n);
        for b in blocks.iter_mut() {
            let y_new = b.dual_prox(&(&b.y + b.apply(&x_bar) * s), s);
            let dy = &b.y - &y_new;
            dual_sq += (&dy / s - b.apply(&dx)).norm_squared();
            dy_kt += b.apply_t(&dy);
            kty_new += b.apply_t(&y_new);
            b.y = y_new;
        }
        let primal_res = (&dx / t - dy_kt).norm();
        let dual_res = dual_sq.sqrt();
        x = x_new;
        kty = kty_new;

        let scale = 1.0 + x.norm();
        if it > 10 && primal_res <= tol * scale && dual_res <= tol * scale {
            break;
        }
        if primal_res > balance * dual_res {
            t /= 1.0 - adapt;
            s *= 1.0 - adapt;
            adapt *= adapt_decay;
        } else if primal_res * balance < dual_res {
            t *= 1.0 - adapt;
            s /= 1.0 - adapt;
            adapt *= adapt_decay;
        }
    }
    let x = restore(problem, &x, warm)?;
    Ok(finish(problem, x, iterations, InnerRoute::PrimalDual))
}

// ---------------------------------------------------------------------------
// Switching subgradient

fn switching_subgradient(problem: &InnerProblem, warm: &Vector) -> Result<InnerResult, InnerError> {
    let (f, g, tau) = (problem.f, problem.g, problem.tau);
    let scale = warm.norm() + 1.0;
    let mut v = problem.set.project(warm)?;
    let mut best: Option<(f64, Vector)> = None;
    let mut least_g = (f64::INFINITY, v.clone());
    let mut iterations = 0;
    for it in 0..problem.budget {
        iterations = it + 1;
        let g_v = g.eval(&v);
        let direction = if g_v > tau + problem.feas_tol {
            if g_v < least_g.0 {
                least_g = (g_v, v.clone());
            }
            g.subgradient(&v)?
        } else {
            let f_v = f.eval(&v);
            if best.as_ref().map(|(bf, _)| f_v < *bf).unwrap_or(true) {
                best = Some((f_v, v.clone()));
            }
            f.subgradient(&v)?
        };
        let norm = direction.norm();
        if norm == 0.0 {
            break;
        }
        let step = scale / ((it + 1) as f64).sqrt();
        if step < problem.epsilon {
            break;
        }
        v = problem.set.project(&(&v - direction * (step / norm)))?;
    }
    match best {
        Some((_, x)) => Ok(finish(problem, x, iterations, InnerRoute::SwitchingSubgradient)),
        None => Err(InnerError::NeverFeasible {
            tau,
            best_g: least_g.0,
        }),
    }
}
