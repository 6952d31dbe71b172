use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sbp_core::geometry::{FeasibleSet, GeometryError, Sense, TOL_PROJ};
use sbp_core::Vector;

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

/// Nearest point of the simplex by bisection on the shift of `max(p - t, 0)`.
fn simplex_by_bisection(p: &Vector, total: f64) -> Vector {
    let (mut lo, mut hi) = (p.min() - total, p.max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = p.iter().map(|x| (x - mid).max(0.0)).sum();
        if s > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    p.map(|x| (x - t).max(0.0))
}

#[test]
fn box_clamps_componentwise() {
    let b = FeasibleSet::boxed(v(&[-3.0, -3.0]), v(&[0.5, 0.5])).unwrap();
    assert_eq!(b.project(&v(&[2.0, -5.0])).unwrap(), v(&[0.5, -3.0]));
}

#[test]
fn ball_scales_radially() {
    let b = FeasibleSet::ball(v(&[0.0, 0.0]), 2f64.sqrt()).unwrap();
    let p = b.project(&v(&[2.0, 2.0])).unwrap();
    assert_abs_diff_eq!(p, v(&[1.0, 1.0]), epsilon = 1e-15);
}

#[test]
fn clamp_inside_the_ball_is_the_intersection_projection() {
    let p = disc_set().project(&v(&[2.0, 2.0])).unwrap();
    assert_abs_diff_eq!(p, v(&[0.5, 0.5]), epsilon = 10.0 * TOL_PROJ);
}

#[test]
fn simplex_matches_bisection() {
    let s = FeasibleSet::simplex(2, 1.0).unwrap();
    let p = s.project(&v(&[1.2, -0.3])).unwrap();
    assert_abs_diff_eq!(p, v(&[1.0, 0.0]), epsilon = 1e-15);
    assert_abs_diff_eq!(p, simplex_by_bisection(&v(&[1.2, -0.3]), 1.0), epsilon = 1e-12);
}

#[test]
fn halfspace_moves_along_the_normal() {
    let h = FeasibleSet::halfspace(v(&[1.0, 1.0]), 5.0, Sense::Le).unwrap();
    assert_abs_diff_eq!(h.project(&v(&[4.0, 4.0])).unwrap(), v(&[2.5, 2.5]), epsilon = 1e-15);
    let g = FeasibleSet::halfspace(v(&[1.0, 1.0]), 5.0, Sense::Ge).unwrap();
    assert_eq!(g.project(&v(&[4.0, 4.0])).unwrap(), v(&[4.0, 4.0]));
}

#[test]
fn membership_examples() {
    let ball = FeasibleSet::ball(v(&[0.0, 0.0]), 2f64.sqrt()).unwrap();
    assert!(ball.contains(&v(&[1.0, 1.0]), 1e-9).unwrap());
    let b = FeasibleSet::boxed(v(&[-3.0, -3.0]), v(&[0.5, 0.5])).unwrap();
    assert!(!b.contains(&v(&[0.6, 0.0]), 1e-9).unwrap());
    let s = FeasibleSet::simplex(8, 1.0).unwrap();
    assert!(s.contains(&Vector::from_element(8, 0.125), 1e-12).unwrap());
}

#[test]
fn dimension_mismatch_is_reported() {
    let b = FeasibleSet::ball(v(&[0.0, 0.0]), 1.0).unwrap();
    assert!(matches!(b.project(&v(&[1.0, 2.0, 3.0])), Err(GeometryError::DimensionMismatch { .. })));
    assert!(b.contains(&v(&[1.0]), 0.0).is_err());
}

#[test]
fn malformed_sets_are_rejected() {
    assert!(FeasibleSet::ball(v(&[0.0]), -1.0).is_err());
    assert!(FeasibleSet::boxed(v(&[1.0]), v(&[0.0])).is_err());
    assert!(FeasibleSet::halfspace(v(&[0.0, 0.0]), 1.0, Sense::Le).is_err());
    assert!(FeasibleSet::intersection(vec![
        FeasibleSet::ball(v(&[0.0]), 1.0).unwrap(),
        FeasibleSet::ball(v(&[0.0, 0.0]), 1.0).unwrap(),
    ])
    .is_err());
}

fn point(dim: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-5.0..5.0f64, dim).prop_map(Vector::from_vec)
}

fn sets() -> impl Strategy<Value = FeasibleSet> {
    prop_oneof![
        (point(3), prop::collection::vec(0.1..3.0f64, 3)).prop_map(|(lo, w)| {
            let hi = &lo + Vector::from_vec(w);
            FeasibleSet::boxed(lo, hi).unwrap()
        }),
        (point(3), 0.1..4.0f64).prop_map(|(c, r)| FeasibleSet::ball(c, r).unwrap()),
        (point(3), -3.0..3.0f64).prop_filter_map("zero normal", |(n, b)| {
            FeasibleSet::halfspace(n, b, Sense::Le).ok()
        }),
        (0.5..3.0f64).prop_map(|t| FeasibleSet::simplex(3, t).unwrap()),
        (0.5..3.0f64).prop_map(|r| {
            FeasibleSet::intersection(vec![
                FeasibleSet::ball(Vector::zeros(3), r).unwrap(),
                FeasibleSet::boxed(Vector::from_element(3, -1.0), Vector::from_element(3, 0.5)).unwrap(),
            ])
            .unwrap()
        }),
    ]
}

proptest! {
    #[test]
    fn projection_is_idempotent(set in sets(), p in point(3)) {
        let q = set.project(&p).unwrap();
        let qq = set.project(&q).unwrap();
        prop_assert!((qq - &q).norm() <= 10.0 * TOL_PROJ);
        prop_assert!(set.contains(&q, 1e-8).unwrap());
    }

    #[test]
    fn projection_is_nonexpansive(set in sets(), p in point(3), q in point(3)) {
        let pp = set.project(&p).unwrap();
        let pq = set.project(&q).unwrap();
        prop_assert!((pp - pq).norm() <= (p - q).norm() + 10.0 * TOL_PROJ);
    }

    #[test]
    fn projection_beats_feasible_candidates(set in sets(), p in point(3), c in point(3)) {
        // Projecting an arbitrary point gives a feasible candidate that can
        // be no closer to p than the projection itself.
        let q = set.project(&p).unwrap();
        let cand = set.project(&c).unwrap();
        prop_assert!((&p - &q).norm() <= (&p - &cand).norm() + 1e-8);
        prop_assert!((&p - &q).dot(&(&cand - &q)) <= 1e-8);
    }

    #[test]
    fn simplex_projection_agrees_with_bisection(p in point(6), total in 0.1..5.0f64) {
        let s = FeasibleSet::simplex(6, total).unwrap();
        let q = s.project(&p).unwrap();
        prop_assert!((q - simplex_by_bisection(&p, total)).amax() <= 1e-10);
    }
}
