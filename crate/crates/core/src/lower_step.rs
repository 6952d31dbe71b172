//! Projected-gradient step on the lower-level objective with an Armijo
//! backtracking search.

use thiserror::Error;

use crate::geometry::{DykstraOptions, FeasibleSet, GeometryError, Vector};
use crate::oracles::{FunctionOracle, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowerStepError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no Armijo step found within {max_backtracks} halvings (non-convex or inconsistent oracle?)")]
    ArmijoExhausted { max_backtracks: u32 },
    #[error("projected direction is ascent: <grad, z - x> = {dir_deriv:e} > {tol:e}")]
    PositiveDirDeriv { dir_deriv: f64, tol: f64 },
    #[error("invalid step parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerStepResult {
    pub z: Vector,
    pub stationary: bool,
    pub gamma: f64,
    pub l: u32,
    pub y: Vector,
    pub alpha: f64,
    pub dir_deriv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerStepParams {
    pub beta: f64,
    pub sigma: f64,
    pub max_backtracks: u32,
    pub projection: DykstraOptions,
}

impl Default for LowerStepParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            sigma: 0.1,
            max_backtracks: 60,
            projection: DykstraOptions::default(),
        }
    }
}

/// Stationarity threshold for `<grad, z - x>`. The second term covers the
/// case where the predicted decrease is below what `g(x)` can resolve in
/// floating point, so the strict Armijo test could never succeed.
pub fn stationarity_tolerance(grad_norm: f64, step_norm: f64, g_x: f64, sigma: f64) -> f64 {
    1e-12 * (1.0 + grad_norm * step_norm) + 16.0 * f64::EPSILON * g_x.abs() / sigma
}

pub fn lower_level_step(
    g: &FunctionOracle,
    set: &FeasibleSet,
    x: &Vector,
    beta: f64,
    sigma: f64,
    max_backtracks: u32,
) -> Result<LowerStepResult, LowerStepError> {
    lower_level_step_with(
        g,
        set,
        x,
        &LowerStepParams {
            beta,
            sigma,
            max_backtracks,
            ..LowerStepParams::default()
        },
    )
}

pub fn lower_level_step_with(
    g: &FunctionOracle,
    set: &FeasibleSet,
    x: &Vector,
    params: &LowerStepParams,
) -> Result<LowerStepResult, LowerStepError> {
    let LowerStepParams {
        beta,
        sigma,
        max_backtracks,
        projection,
    } = *params;
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(LowerStepError::InvalidParameter(format!("sigma = {sigma} not in (0, 1)")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LowerStepError::InvalidParameter(format!("beta = {beta} must be positive")));
    }
    let grad = g.descent_slope(x)?;
    let g_x = g.value(x)?;
    let z = set.project_with(&(x - &grad * beta), &projection)?;
    let step = &z - x;
    let dir_deriv = grad.dot(&step);
    let grad_norm = grad.norm();
    let tol = stationarity_tolerance(grad_norm, step.norm(), g_x, sigma);
    let slack = if set.is_primitive() {
        0.0
    } else {
        10.0 * projection.tol * grad_norm
    };
    if dir_deriv > tol + slack {
        return Err(LowerStepError::PositiveDirDeriv { dir_deriv, tol: tol + slack });
    }
    if dir_deriv >= -tol {
        return Ok(LowerStepResult {
            z,
            stationary: true,
            gamma: 0.0,
            l: 0,
            y: x.clone(),
            alpha: g_x,
            dir_deriv,
        });
    }
    let mut gamma = 1.0;
    for l in 0..=max_backtracks {
        let y = x + &step * gamma;
        let g_y = g.eval(&y);
        if g_y < g_x + sigma * gamma * dir_deriv {
            return Ok(LowerStepResult {
                z,
                stationary: false,
                gamma,
                l,
                y,
                alpha: g_y,
                dir_deriv,
            });
        }
        gamma *= 0.5;
    }
    Err(LowerStepError::ArmijoExhausted { max_backtracks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn disc_set() -> FeasibleSet {
        FeasibleSet::intersection(vec![
            FeasibleSet::ball(v(&[0.0, 0.0]), 2f64.sqrt()).unwrap(),
            FeasibleSet::boxed(v(&[-3.0, -3.0]), v(&[0.5, 0.5])).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn stationary_inside_disc() {
        let g = FunctionOracle::dist_to_disc_squared(2).unwrap();
        let r = lower_level_step(&g, &disc_set(), &v(&[0.5, 0.5]), 1.0, 0.1, 60).unwrap();
        assert!(r.stationary);
        assert_eq!(r.alpha, 0.0);
        assert_eq!(r.z, v(&[0.5, 0.5]));
    }

    #[test]
    fn full_step_from_corner() {
        let g = FunctionOracle::dist_to_disc_squared(2).unwrap();
        let x = v(&[-1.0, -1.0]);
        let r = lower_level_step(&g, &disc_set(), &x, 1.0, 0.1, 60).unwrap();
        assert!(!r.stationary);
        assert_abs_diff_eq!(r.z, v(&[-0.414214, -0.414214]), epsilon = 1e-6);
        assert_abs_diff_eq!(r.dir_deriv, -0.686292, epsilon = 1e-6);
        assert_eq!(r.l, 0);
        assert_eq!(r.gamma, 1.0);
        assert_eq!(r.y, r.z);
        assert_eq!(r.alpha, 0.0);

        // Brute-force scan of the Armijo condition over j = 0..20.
        let g_x = g.value(&x).unwrap();
        let first = (0..=20)
            .find(|&j| {
                let t = 0.5f64.powi(j);
                g.value(&(&x + (&r.z - &x) * t)).unwrap() < g_x + 0.1 * t * r.dir_deriv
            })
            .unwrap();
        assert_eq!(first as u32, r.l);
    }

    #[test]
    fn exact_least_squares_solution_is_stationary() {
        let g = FunctionOracle::least_squares(
            dmatrix![1.0, 2.0, -3.0, 1.0; 3.0, -1.0, -2.0, -4.0; 2.0, 3.0, -5.0, 1.0],
            v(&[-2.0, 1.0, -3.0]),
        )
        .unwrap();
        let r = lower_level_step(
            &g,
            &FeasibleSet::whole_space(4),
            &v(&[0.0, -1.0, 0.0, 0.0]),
            1.0,
            0.1,
            60,
        )
        .unwrap();
        assert!(r.stationary);
        assert_eq!(r.alpha, 0.0);
    }

    #[test]
    fn backtracking_when_full_step_overshoots() {
        // g = 10 x^2 with beta = 1 overshoots badly: z = -19 x.
        let g = FunctionOracle::quadratic_form(dmatrix![10.0]).unwrap();
        let x = v(&[1.0]);
        let r = lower_level_step(&g, &FeasibleSet::whole_space(1), &x, 1.0, 0.1, 60).unwrap();
        assert!(r.l > 0);
        assert!(r.alpha < g.value(&x).unwrap());
        // Minimality: every smaller j fails the strict test.
        for j in 0..r.l {
            let t = 0.5f64.powi(j as i32);
            let y = &x + (&r.z - &x) * t;
            assert!(g.value(&y).unwrap() >= 10.0 + 0.1 * t * r.dir_deriv);
        }
    }

    #[test]
    fn nonsmooth_piecewise_step_descends() {
        let g = FunctionOracle::max_of_affine(
            dmatrix![1.0, 0.0; 0.0, 0.0; 0.0, 1.0],
            v(&[-2.0, 0.0, -2.0]),
        )
        .unwrap();
        let x = v(&[2.0, 2.01]);
        let r = lower_level_step(&g, &FeasibleSet::whole_space(2), &x, 1.0, 0.1, 60).unwrap();
        assert!(!r.stationary);
        assert!(r.alpha < 0.01);
        let at_kink = lower_level_step(&g, &FeasibleSet::whole_space(2), &v(&[2.0, 2.0]), 1.0, 0.1, 60)
            .unwrap();
        assert!(at_kink.stationary);
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = FunctionOracle::dist_to_disc_squared(2).unwrap();
        assert!(matches!(
            lower_level_step(&g, &disc_set(), &v(&[0.0, 0.0]), 1.0, 1.5, 60),
            Err(LowerStepError::InvalidParameter(_))
        ));
        let l1 = FunctionOracle::l1_norm(2).unwrap();
        assert!(matches!(
            lower_level_step(&l1, &disc_set(), &v(&[0.0, 0.0]), 1.0, 0.1, 60),
            Err(LowerStepError::Oracle(OracleError::NotSmooth(_)))
        ));
    }
}
