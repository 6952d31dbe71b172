//! Value, gradient and subgradient oracles for the convex functions that
//! appear as upper- or lower-level objectives.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{FeasibleSet, Sense, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: oracle has dimension {expected}, point has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} is not smooth; no gradient is available")]
    NotSmooth(&'static str),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("invalid oracle data: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    Nonsmooth,
}

/// `||R x - center||^2 + floor`, an exact rewrite of a convex quadratic used
/// to describe its sublevel sets.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFactor {
    pub r: DMatrix<f64>,
    pub center: Vector,
    pub floor: f64,
}

/// Exact description of a sublevel set `{ x : g(x) <= tau }`.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelSet {
    Empty,
    /// The sublevel set is itself a projectable set.
    Direct(FeasibleSet),
    /// `{ x : ||R x - center|| <= radius }`.
    Ellipsoid {
        r: DMatrix<f64>,
        center: Vector,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum FunctionOracle {
    /// `<c, x> + d`
    Linear { c: Vector, d: f64 },
    /// `<x, A x>` with `A` symmetric positive semidefinite.
    QuadraticForm { a: DMatrix<f64>, factor: QuadraticFactor },
    /// `||A x - b||^2`
    LeastSquares {
        a: DMatrix<f64>,
        b: Vector,
        factor: QuadraticFactor,
    },
    /// `0.5 ||x - anchor||^2`
    SquaredDistance { anchor: Vector },
    /// `||x||_1`
    L1Norm { dim: usize },
    /// `max_i (<c_i, x> + d_i)`, one row of `coeffs` per piece.
    MaxOfAffine { coeffs: DMatrix<f64>, offsets: Vector },
    /// `((||x|| - 1)_+)^2`, the squared distance to the unit ball.
    DistToDiscSquared { dim: usize },
}

const PSD_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-12;

impl FunctionOracle {
    pub fn linear(c: Vector, d: f64) -> Result<Self, OracleError> {
        if c.is_empty() || !c.iter().all(|v| v.is_finite()) || !d.is_finite() {
            return Err(OracleError::Invalid("linear coefficients must be finite".into()));
        }
        Ok(FunctionOracle::Linear { c, d })
    }

    /// Validates symmetry and positive semidefiniteness. Eigenvalues down to
    /// `-1e-10 * ||A||` are accepted and clipped to zero.
    pub fn quadratic_form(a: DMatrix<f64>) -> Result<Self, OracleError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(OracleError::Invalid("quadratic form needs a square matrix".into()));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(OracleError::Invalid("matrix entries must be finite".into()));
        }
        let scale = a.abs().max().max(f64::MIN_POSITIVE);
        if (&a - a.transpose()).abs().max() > 1e-12 * scale {
            return Err(OracleError::Invalid("quadratic form matrix is not symmetric".into()));
        }
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let min_eig = eig.eigenvalues.min();
        let norm = eig.eigenvalues.abs().max();
        if min_eig < -PSD_TOL * norm {
            return Err(OracleError::NotPsd { min_eig });
        }
        let a = if min_eig < 0.0 {
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
        } else {
            a
        };
        let factor = quadratic_form_factor(&eig, norm);
        Ok(FunctionOracle::QuadraticForm { a, factor })
    }

    pub fn least_squares(a: DMatrix<f64>, b: Vector) -> Result<Self, OracleError> {
        if a.nrows() != b.len() || a.is_empty() {
            return Err(OracleError::Invalid(format!(
                "least squares: A is {}x{} but b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(OracleError::Invalid("least squares data must be finite".into()));
        }
        let factor = least_squares_factor(&a, &b);
        Ok(FunctionOracle::LeastSquares { a, b, factor })
    }

    pub fn squared_distance(anchor: Vector) -> Result<Self, OracleError> {
        if anchor.is_empty() || !anchor.iter().all(|v| v.is_finite()) {
            return Err(OracleError::Invalid("anchor must be finite and nonempty".into()));
        }
        Ok(FunctionOracle::SquaredDistance { anchor })
    }

    pub fn l1_norm(dim: usize) -> Result<Self, OracleError> {
        if dim == 0 {
            return Err(OracleError::Invalid("l1 norm of dimension 0".into()));
        }
        Ok(FunctionOracle::L1Norm { dim })
    }

    pub fn max_of_affine(coeffs: DMatrix<f64>, offsets: Vector) -> Result<Self, OracleError> {
        if coeffs.nrows() == 0 || coeffs.ncols() == 0 || coeffs.nrows() != offsets.len() {
            return Err(OracleError::Invalid(
                "max of affine needs one offset per coefficient row".into(),
            ));
        }
        if !coeffs.iter().chain(offsets.iter()).all(|v| v.is_finite()) {
            return Err(OracleError::Invalid("affine pieces must be finite".into()));
        }
        Ok(FunctionOracle::MaxOfAffine { coeffs, offsets })
    }

    pub fn dist_to_disc_squared(dim: usize) -> Result<Self, OracleError> {
        if dim == 0 {
            return Err(OracleError::Invalid("disc of dimension 0".into()));
        }
        Ok(FunctionOracle::DistToDiscSquared { dim })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FunctionOracle::Linear { .. } => "linear",
            FunctionOracle::QuadraticForm { .. } => "quadratic_form",
            FunctionOracle::LeastSquares { .. } => "least_squares",
            FunctionOracle::SquaredDistance { .. } => "squared_distance",
            FunctionOracle::L1Norm { .. } => "l1_norm",
            FunctionOracle::MaxOfAffine { .. } => "max_of_affine",
            FunctionOracle::DistToDiscSquared { .. } => "dist_to_disc_squared",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FunctionOracle::Linear { c, .. } => c.len(),
            FunctionOracle::QuadraticForm { a, .. } => a.nrows(),
            FunctionOracle::LeastSquares { a, .. } => a.ncols(),
            FunctionOracle::SquaredDistance { anchor } => anchor.len(),
            FunctionOracle::L1Norm { dim } | FunctionOracle::DistToDiscSquared { dim } => *dim,
            FunctionOracle::MaxOfAffine { coeffs, .. } => coeffs.ncols(),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            FunctionOracle::L1Norm { .. } | FunctionOracle::MaxOfAffine { .. } => {
                Smoothness::Nonsmooth
            }
            _ => Smoothness::Smooth,
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.smoothness() == Smoothness::Smooth
    }

    /// Whether the oracle may serve as a lower-level objective: smooth, or
    /// piecewise affine with finitely many pieces.
    pub fn supports_lower_level(&self) -> bool {
        self.is_smooth() || matches!(self, FunctionOracle::MaxOfAffine { .. })
    }

    fn check_dim(&self, x: &Vector) -> Result<(), OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64, OracleError> {
        self.check_dim(x)?;
        Ok(self.eval(x))
    }

    /// Unchecked evaluation; callers guarantee the dimension.
    pub(crate) fn eval(&self, x: &Vector) -> f64 {
        match self {
            FunctionOracle::Linear { c, d } => c.dot(x) + d,
            FunctionOracle::QuadraticForm { a, .. } => x.dot(&(a * x)),
            FunctionOracle::LeastSquares { a, b, .. } => (a * x - b).norm_squared(),
            FunctionOracle::SquaredDistance { anchor } => 0.5 * (x - anchor).norm_squared(),
            FunctionOracle::L1Norm { .. } => x.lp_norm(1),
            FunctionOracle::MaxOfAffine { coeffs, offsets } => {
                (coeffs * x + offsets).max()
            }
            FunctionOracle::DistToDiscSquared { .. } => {
                let excess = (x.norm() - 1.0).max(0.0);
                excess * excess
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector, OracleError> {
        self.check_dim(x)?;
        match self {
            FunctionOracle::L1Norm { .. } | FunctionOracle::MaxOfAffine { .. } => {
                Err(OracleError::NotSmooth(self.name()))
            }
            _ => Ok(self.smooth_gradient(x)),
        }
    }

    fn smooth_gradient(&self, x: &Vector) -> Vector {
        match self {
            FunctionOracle::Linear { c, .. } => c.clone(),
            FunctionOracle::QuadraticForm { a, .. } => (a * x) * 2.0,
            FunctionOracle::LeastSquares { a, b, .. } => a.tr_mul(&(a * x - b)) * 2.0,
            FunctionOracle::SquaredDistance { anchor } => x - anchor,
            FunctionOracle::DistToDiscSquared { .. } => {
                let r = x.norm();
                if r >= 1.0 {
                    x * (2.0 - 2.0 / r)
                } else {
                    Vector::zeros(x.len())
                }
            }
            FunctionOracle::L1Norm { .. } | FunctionOracle::MaxOfAffine { .. } => {
                unreachable!("nonsmooth oracle in smooth_gradient")
            }
        }
    }

    /// A deterministic element of the subdifferential. For smooth oracles
    /// this is the gradient; the l1 norm uses 0 on zero coordinates and the
    /// max of affine pieces uses the lowest-index maximizing piece.
    pub fn subgradient(&self, x: &Vector) -> Result<Vector, OracleError> {
        self.check_dim(x)?;
        Ok(match self {
            FunctionOracle::L1Norm { .. } => x.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            FunctionOracle::MaxOfAffine { coeffs, offsets } => {
                let vals = coeffs * x + offsets;
                let max = vals.max();
                let idx = vals.iter().position(|v| *v == max).unwrap_or(0);
                coeffs.row(idx).transpose()
            }
            _ => self.smooth_gradient(x),
        })
    }

    /// Direction used by the lower-level step: the gradient of a smooth
    /// oracle, or the minimum-norm subgradient of a max of affine pieces
    /// (its negative is the steepest-descent direction).
    pub fn descent_slope(&self, x: &Vector) -> Result<Vector, OracleError> {
        self.check_dim(x)?;
        match self {
            FunctionOracle::MaxOfAffine { coeffs, offsets } => {
                Ok(min_norm_active_subgradient(coeffs, offsets, x))
            }
            FunctionOracle::L1Norm { .. } => Err(OracleError::NotSmooth(self.name())),
            _ => Ok(self.smooth_gradient(x)),
        }
    }

    /// Max over coordinates of `|central difference - gradient| / (1 + |gradient|)`.
    pub fn check_gradient(&self, x: &Vector, h: f64) -> Result<f64, OracleError> {
        let grad = self.gradient(x)?;
        let mut worst: f64 = 0.0;
        let mut probe = x.clone();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = self.eval(&probe);
            probe[i] = x[i] - h;
            let down = self.eval(&probe);
            probe[i] = x[i];
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / (1.0 + grad[i].abs()));
        }
        Ok(worst)
    }

    /// Exact description of `{ x : self(x) <= tau }`, or `None` for
    /// oracles whose sublevel sets are not representable (the l1 norm).
    pub fn level_set(&self, tau: f64) -> Option<LevelSet> {
        let n = self.dim();
        Some(match self {
            FunctionOracle::Linear { c, d } => {
                if c.norm_squared() == 0.0 {
                    if *d <= tau {
                        LevelSet::Direct(FeasibleSet::whole_space(n))
                    } else {
                        LevelSet::Empty
                    }
                } else {
                    LevelSet::Direct(FeasibleSet::Halfspace {
                        normal: c.clone(),
                        offset: tau - d,
                        sense: Sense::Le,
                    })
                }
            }
            FunctionOracle::SquaredDistance { anchor } => {
                if tau < 0.0 {
                    LevelSet::Empty
                } else {
                    LevelSet::Direct(FeasibleSet::Ball {
                        center: anchor.clone(),
                        radius: (2.0 * tau).sqrt(),
                    })
                }
            }
            FunctionOracle::DistToDiscSquared { .. } => {
                if tau < 0.0 {
                    LevelSet::Empty
                } else {
                    LevelSet::Direct(FeasibleSet::Ball {
                        center: Vector::zeros(n),
                        radius: 1.0 + tau.sqrt(),
                    })
                }
            }
            FunctionOracle::MaxOfAffine { coeffs, offsets } => {
                let mut halfspaces = Vec::new();
                for (i, d) in offsets.iter().enumerate() {
                    let normal = coeffs.row(i).transpose();
                    if normal.norm_squared() == 0.0 {
                        if *d > tau {
                            return Some(LevelSet::Empty);
                        }
                        continue;
                    }
                    halfspaces.push(FeasibleSet::Halfspace {
                        normal,
                        offset: tau - d,
                        sense: Sense::Le,
                    });
                }
                LevelSet::Direct(match halfspaces.len() {
                    0 => FeasibleSet::whole_space(n),
                    1 => halfspaces.pop().unwrap(),
                    _ => FeasibleSet::Intersection { sets: halfspaces },
                })
            }
            FunctionOracle::QuadraticForm { factor, .. }
            | FunctionOracle::LeastSquares { factor, .. } => {
                let slack = tau - factor.floor;
                if slack < -1e-12 * (1.0 + factor.floor.abs()) {
                    LevelSet::Empty
                } else if factor.r.nrows() == 0 {
                    LevelSet::Direct(FeasibleSet::whole_space(n))
                } else {
                    LevelSet::Ellipsoid {
                        r: factor.r.clone(),
                        center: factor.center.clone(),
                        radius: slack.max(0.0).sqrt(),
                    }
                }
            }
            FunctionOracle::L1Norm { .. } => return None,
        })
    }
}

fn quadratic_form_factor(eig: &SymmetricEigen<f64, nalgebra::Dyn>, norm: f64) -> QuadraticFactor {
    let n = eig.eigenvalues.len();
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > RANK_TOL * norm)
        .collect();
    let mut r = DMatrix::zeros(keep.len(), n);
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for j in 0..n {
            r[(row, j)] = s * eig.eigenvectors[(j, i)];
        }
    }
    QuadraticFactor {
        r,
        center: Vector::zeros(keep.len()),
        floor: 0.0,
    }
}

fn least_squares_factor(a: &DMatrix<f64>, b: &Vector) -> QuadraticFactor {
    let n = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
        .collect();
    let mut r = DMatrix::zeros(keep.len(), n);
    let mut center = Vector::zeros(keep.len());
    let mut range_part = Vector::zeros(b.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = svd.singular_values[i];
        for j in 0..n {
            r[(row, j)] = s * v_t[(i, j)];
        }
        let ui = u.column(i);
        let coef = ui.dot(b);
        center[row] = coef;
        range_part += ui * coef;
    }
    QuadraticFactor {
        r,
        center,
        floor: (b - range_part).norm_squared(),
    }
}

/// Minimum-norm point of the convex hull of the active pieces' gradients.
fn min_norm_active_subgradient(coeffs: &DMatrix<f64>, offsets: &Vector, x: &Vector) -> Vector {
    let vals = coeffs * x + offsets;
    let max = vals.max();
    let tol = 1e-12 * (1.0 + max.abs());
    let active: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] >= max - tol).collect();
    let row = |i: usize| -> Vector { coeffs.row(i).transpose() };
    match active.len() {
        1 => row(active[0]),
        2 => {
            let (p, q) = (row(active[0]), row(active[1]));
            let diff = &q - &p;
            let dd = diff.norm_squared();
            if dd == 0.0 {
                return p;
            }
            let t = (-p.dot(&diff) / dd).clamp(0.0, 1.0);
            p + diff * t
        }
        m => {
            // Projected gradient on the weight simplex for min ||G^T w||^2.
            let g = DMatrix::from_fn(m, x.len(), |i, j| coeffs[(active[i], j)]);
            let gram = &g * g.transpose();
            let lip = 2.0 * SymmetricEigen::new(gram.clone()).eigenvalues.max().max(1e-300);
            let mut w = Vector::from_element(m, 1.0 / m as f64);
            for _ in 0..20_000 {
                let grad = (&gram * &w) * 2.0;
                let next = crate::geometry::project_simplex(&(&w - grad / lip), 1.0);
                let moved = (&next - &w).norm();
                w = next;
                if moved < 1e-15 {
                    break;
                }
            }
            g.tr_mul(&w)
        }
    }
}
