//! Euclidean projections onto the convex sets that describe lower-level
//! feasible regions.
//!
//! Primitive sets (box, ball, halfspace, scaled simplex) have closed-form
//! projections. Intersections are projected with Dykstra's algorithm, which
//! converges to the *nearest* point of the intersection rather than to an
//! arbitrary feasible point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector = DVector<f64>;

/// Default Dykstra tolerance on the sweep-to-sweep change of the increments.
pub const TOL_PROJ: f64 = 1e-10;
/// Default cap on Dykstra sweeps.
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: set has dimension {expected}, point has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Dykstra did not converge after {sweeps} sweeps (residual {residual:e})")]
    DykstraNoConvergence { sweeps: usize, residual: f64 },
    #[error("invalid set: {0}")]
    Invalid(String),
}

/// Direction of a halfspace inequality `<normal, x> (<= | >=) offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "le", alias = "<=")]
    Le,
    #[serde(rename = "ge", alias = ">=")]
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DykstraOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DykstraOptions {
    fn default() -> Self {
        Self {
            tol: TOL_PROJ,
            max_sweeps: MAX_SWEEPS,
        }
    }
}

/// A closed convex subset of R^n with an exact or Dykstra-composed
/// projection oracle.
///
/// Box bounds may be infinite; this is used internally for one-sided
/// constraints. Use the checked constructors to build sets from user data.
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    WholeSpace { dim: usize },
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
    Halfspace { normal: Vector, offset: f64, sense: Sense },
    /// `{ x : x >= 0, sum(x) = total }`.
    Simplex { dim: usize, total: f64 },
    Intersection { sets: Vec<FeasibleSet> },
}

impl FeasibleSet {
    pub fn whole_space(dim: usize) -> Self {
        FeasibleSet::WholeSpace { dim }
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self, GeometryError> {
        let set = FeasibleSet::Box { lower, upper };
        set.validate()?;
        Ok(set)
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self, GeometryError> {
        let set = FeasibleSet::Ball { center, radius };
        set.validate()?;
        Ok(set)
    }

    pub fn halfspace(normal: Vector, offset: f64, sense: Sense) -> Result<Self, GeometryError> {
        let set = FeasibleSet::Halfspace {
            normal,
            offset,
            sense,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn simplex(dim: usize, total: f64) -> Result<Self, GeometryError> {
        let set = FeasibleSet::Simplex { dim, total };
        set.validate()?;
        Ok(set)
    }

    /// Builds an intersection, flattening nested intersections and dropping
    /// whole-space members.
    pub fn intersection(sets: Vec<FeasibleSet>) -> Result<Self, GeometryError> {
        if sets.is_empty() {
            return Err(GeometryError::Invalid("empty intersection".into()));
        }
        let dim = sets[0].dim();
        let mut flat = Vec::with_capacity(sets.len());
        for s in sets {
            s.validate()?;
            if s.dim() != dim {
                return Err(GeometryError::Invalid(format!(
                    "intersection members disagree on dimension ({} vs {})",
                    dim,
                    s.dim()
                )));
            }
            match s {
                FeasibleSet::Intersection { sets } => flat.extend(sets),
                FeasibleSet::WholeSpace { .. } => {}
                other => flat.push(other),
            }
        }
        Ok(match flat.len() {
            0 => FeasibleSet::WholeSpace { dim },
            1 => flat.pop().unwrap(),
            _ => FeasibleSet::Intersection { sets: flat },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::WholeSpace { dim } | FeasibleSet::Simplex { dim, .. } => *dim,
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::Halfspace { normal, .. } => normal.len(),
            FeasibleSet::Intersection { sets } => sets.first().map_or(0, |s| s.dim()),
        }
    }

    /// Members of an intersection, or the set itself.
    pub fn members(&self) -> &[FeasibleSet] {
        match self {
            FeasibleSet::Intersection { sets } => sets,
            other => std::slice::from_ref(other),
        }
    }

    pub fn is_primitive(&self) -> bool {
        !matches!(self, FeasibleSet::Intersection { .. })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::Invalid(msg));
        match self {
            FeasibleSet::WholeSpace { dim } => {
                if *dim == 0 {
                    return bad("whole space of dimension 0".into());
                }
            }
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return bad("box bounds must be nonempty and of equal length".into());
                }
                for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
                    if l.is_nan() || u.is_nan() || l > u {
                        return bad(format!("box bound {i}: lower {l} > upper {u}"));
                    }
                }
            }
            FeasibleSet::Ball { center, radius } => {
                if center.is_empty() || !center.iter().all(|v| v.is_finite()) {
                    return bad("ball center must be finite and nonempty".into());
                }
                if !(radius.is_finite() && *radius >= 0.0) {
                    return bad(format!("ball radius {radius} must be finite and >= 0"));
                }
            }
            FeasibleSet::Halfspace { normal, offset, .. } => {
                if !normal.iter().all(|v| v.is_finite()) || !offset.is_finite() {
                    return bad("halfspace data must be finite".into());
                }
                if normal.norm_squared() == 0.0 {
                    return bad("halfspace normal must be nonzero".into());
                }
            }
            FeasibleSet::Simplex { dim, total } => {
                if *dim == 0 {
                    return bad("simplex of dimension 0".into());
                }
                if !(total.is_finite() && *total > 0.0) {
                    return bad(format!("simplex total {total} must be positive"));
                }
            }
            FeasibleSet::Intersection { sets } => {
                if sets.is_empty() {
                    return bad("empty intersection".into());
                }
                let d = sets[0].dim();
                for s in sets {
                    s.validate()?;
                    if s.dim() != d {
                        return bad("intersection members disagree on dimension".into());
                    }
                }
            }
        }
        Ok(())
    }

    fn check_dim(&self, point: &Vector) -> Result<(), GeometryError> {
        if point.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: point.len(),
            });
        }
        Ok(())
    }

    /// Euclidean projection with default Dykstra options.
    pub fn project(&self, point: &Vector) -> Result<Vector, GeometryError> {
        self.project_with(point, &DykstraOptions::default())
    }

    pub fn project_with(
        &self,
        point: &Vector,
        opts: &DykstraOptions,
    ) -> Result<Vector, GeometryError> {
        self.check_dim(point)?;
        Ok(match self {
            FeasibleSet::WholeSpace { .. } => point.clone(),
            FeasibleSet::Box { lower, upper } => project_box(point, lower, upper),
            FeasibleSet::Ball { center, radius } => project_ball(point, center, *radius),
            FeasibleSet::Halfspace {
                normal,
                offset,
                sense,
            } => project_halfspace(point, normal, *offset, *sense),
            FeasibleSet::Simplex { total, .. } => project_simplex(point, *total),
            FeasibleSet::Intersection { sets } => dykstra(sets, point, opts)?,
        })
    }

    /// True iff every defining constraint is violated by at most `tol`.
    pub fn contains(&self, point: &Vector, tol: f64) -> Result<bool, GeometryError> {
        self.check_dim(point)?;
        Ok(self.violation(point) <= tol)
    }

    /// Largest constraint violation of `point` (0 when feasible).
    ///
    /// Panics if the dimension does not match; use [`contains`](Self::contains)
    /// for a checked query.
    pub fn violation(&self, point: &Vector) -> f64 {
        match self {
            FeasibleSet::WholeSpace { .. } => 0.0,
            FeasibleSet::Box { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(x, (l, u))| (l - x).max(x - u).max(0.0))
                .fold(0.0, f64::max),
            FeasibleSet::Ball { center, radius } => ((point - center).norm() - radius).max(0.0),
            FeasibleSet::Halfspace {
                normal,
                offset,
                sense,
            } => {
                let v = normal.dot(point) - offset;
                match sense {
                    Sense::Le => v.max(0.0),
                    Sense::Ge => (-v).max(0.0),
                }
            }
            FeasibleSet::Simplex { total, .. } => {
                let neg = point.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max);
                neg.max((point.sum() - total).abs())
            }
            FeasibleSet::Intersection { sets } => sets
                .iter()
                .map(|s| s.violation(point))
                .fold(0.0, f64::max),
        }
    }

    /// Projects the origin and checks that the result is feasible. Fails
    /// for (numerically) empty intersections.
    pub fn feasibility_probe(&self) -> Result<Vector, GeometryError> {
        let origin = Vector::zeros(self.dim());
        let p = self.project(&origin)?;
        let tol = TOL_PROJ * 100.0;
        if self.violation(&p) > tol {
            return Err(GeometryError::Invalid(format!(
                "set appears empty: projection of the origin violates constraints by {:e}",
                self.violation(&p)
            )));
        }
        Ok(p)
    }
}

fn project_box(p: &Vector, lower: &Vector, upper: &Vector) -> Vector {
    Vector::from_iterator(
        p.len(),
        p.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(x, (l, u))| x.max(*l).min(*u)),
    )
}

fn project_ball(p: &Vector, center: &Vector, radius: f64) -> Vector {
    let d = p - center;
    let n = d.norm();
    if n <= radius {
        p.clone()
    } else {
        center + d * (radius / n)
    }
}

fn project_halfspace(p: &Vector, normal: &Vector, offset: f64, sense: Sense) -> Vector {
    let excess = normal.dot(p) - offset;
    let outside = match sense {
        Sense::Le => excess > 0.0,
        Sense::Ge => excess < 0.0,
    };
    if outside {
        p - normal * (excess / normal.norm_squared())
    } else {
        p.clone()
    }
}

/// Sort-and-threshold projection onto `{ x >= 0, sum(x) = total }`.
pub(crate) fn project_simplex(p: &Vector, total: f64) -> Vector {
    let mut sorted: Vec<f64> = p.iter().copied().collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    p.map(|x| (x - theta).max(0.0))
}

fn dykstra(
    sets: &[FeasibleSet],
    point: &Vector,
    opts: &DykstraOptions,
) -> Result<Vector, GeometryError> {
    let mut x = point.clone();
    let mut increments = vec![Vector::zeros(point.len()); sets.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let mut change = 0.0;
        for (set, incr) in sets.iter().zip(increments.iter_mut()) {
            let shifted = &x + &*incr;
            let z = set.project_with(&shifted, opts)?;
            let next = shifted - &z;
            change += (&next - &*incr).norm_squared();
            *incr = next;
            x = z;
        }
        residual = change.sqrt();
        if residual <= opts.tol {
            let worst = sets.iter().map(|s| s.violation(&x)).fold(0.0, f64::max);
            if worst <= opts.tol * 10.0 {
                return Ok(x);
            }
            residual = residual.max(worst);
        }
    }
    Err(GeometryError::DykstraNoConvergence {
        sweeps: opts.max_sweeps,
        residual,
    })
}
