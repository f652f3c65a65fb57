use nalgebra::{dmatrix, dvector, DMatrix};

use super::*;
use crate::domain::{Domain, Factor};
use crate::expr::parse;
use crate::field::{ScalarField, Tolerances};
use crate::metric::Metric;
use crate::numcheck;

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

fn setup(domain: Domain, src: &str) -> (Domain, ScalarField, Tolerances) {
    let expr = parse(src, domain.dim()).unwrap();
    let field = ScalarField::new(expr, &Metric::Euclidean, domain.dim()).unwrap();
    let tol = Tolerances::for_domain(&domain);
    (domain, field, tol)
}

fn unit_interval() -> Domain {
    Domain::product(vec![Factor::Interval { lo: 0.0, hi: 1.0 }]).unwrap()
}

fn unit_square() -> Domain {
    Domain::product(vec![
        Factor::Interval { lo: 0.0, hi: 1.0 },
        Factor::Interval { lo: 0.0, hi: 1.0 },
    ])
    .unwrap()
}

fn cylinder() -> Domain {
    Domain::product(vec![
        Factor::Circle { period: TAU },
        Factor::Interval { lo: 0.0, hi: 1.0 },
    ])
    .unwrap()
}

fn torus() -> Domain {
    Domain::product(vec![
        Factor::Circle { period: TAU },
        Factor::Circle { period: TAU },
    ])
    .unwrap()
}

#[test]
fn interval_parabola_yields_two_minima_and_one_maximum() {
    let (domain, field, tol) = setup(unit_interval(), "-(x1 - 0.4)^2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    assert_eq!(set.points.len(), 3);
    assert_eq!(set.generators.len(), 3);
    // Value order: f(1) = -0.36 < f(0) = -0.16 < f(0.4) = 0.
    let p0 = set.generator(0);
    let p1 = set.generator(1);
    let p2 = set.generator(2);
    assert!((p0.x[0] - 1.0).abs() < 1e-9 && p0.index == 0);
    assert!(p1.x[0].abs() < 1e-9 && p1.index == 0);
    assert!((p2.x[0] - 0.4).abs() < 1e-9 && p2.index == 1);
    assert_eq!(set.counts(1), vec![2, 1]);
    // Interior maximum: one descending direction spanning the whole line.
    assert_eq!(p2.e_minus.ncols(), 1);
    assert!((p2.e_minus[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(p2.e_plus.ncols(), 0);
    // Endpoints: no descending directions, oriented completion.
    assert!((p0.e_plus[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn linear_function_on_square_has_one_essential_corner() {
    let (domain, field, tol) = setup(unit_square(), "x1 + x2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    // The four vertices are restriction-critical; only the low corner rests.
    assert_eq!(set.points.len(), 4);
    assert_eq!(set.generators.len(), 1);
    let p = set.generator(0);
    assert!(p.x.norm() < 1e-9);
    assert_eq!(p.index, 0);
    assert_eq!(p.stratum.depth(), 2);
    assert_eq!(set.counts(2), vec![1, 0, 0]);
}

#[test]
fn cube_diagonal_has_one_essential_corner() {
    let domain = Domain::product(vec![
        Factor::Interval { lo: 0.0, hi: 1.0 },
        Factor::Interval { lo: 0.0, hi: 1.0 },
        Factor::Interval { lo: 0.0, hi: 1.0 },
    ])
    .unwrap();
    let (domain, field, tol) = setup(domain, "x1 + x2 + x3");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    assert_eq!(set.points.len(), 8);
    assert_eq!(set.counts(3), vec![1, 0, 0, 0]);
    assert!(set.generator(0).x.norm() < 1e-9);
}

#[test]
fn simplex_linear_function_has_one_essential_vertex() {
    let a = dmatrix![-1.0, 0.0; 0.0, -1.0; 1.0, 1.0];
    let b = dvector![0.0, 0.0, 1.0];
    let domain = Domain::polytope(a, b).unwrap();
    let (domain, field, tol) = setup(domain, "x1 + 2*x2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    assert_eq!(set.points.len(), 3);
    assert_eq!(set.generators.len(), 1);
    assert!(set.generator(0).x.norm() < 1e-9);
}

#[test]
fn cylinder_has_boundary_saddle_and_minimum() {
    let (domain, field, tol) = setup(cylinder(), "cos(x1) - x2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    // Two rest points on the top circle plus two transit points on the bottom.
    assert_eq!(set.points.len(), 4);
    assert_eq!(set.generators.len(), 2);
    let min = set.generator(0);
    let saddle = set.generator(1);
    assert!(domain.distance(&min.x, &dvector![PI, 1.0]) < 1e-9);
    assert_eq!(min.index, 0);
    assert!(domain.distance(&saddle.x, &dvector![0.0, 1.0]) < 1e-9);
    assert_eq!(saddle.index, 1);
    // Saddle frames: descent along the circle, completion off the wall.
    assert!((&saddle.e_minus - DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).norm() < 1e-9);
    assert!((&saddle.e_plus - DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() < 1e-9);
}

#[test]
fn torus_height_has_four_generators_with_oriented_frames() {
    let (domain, field, tol) = setup(torus(), "cos(x1) + cos(x2)");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    assert_eq!(set.points.len(), 4);
    assert_eq!(set.counts(2), vec![1, 2, 1]);
    let min = set.generator(0);
    let s1 = set.generator(1);
    let s2 = set.generator(2);
    let max = set.generator(3);
    assert!(domain.distance(&min.x, &dvector![PI, PI]) < 1e-9);
    // Saddle tie on value is broken lexicographically: (0, pi) before (pi, 0).
    assert!(domain.distance(&s1.x, &dvector![0.0, PI]) < 1e-9);
    assert!(domain.distance(&s2.x, &dvector![PI, 0.0]) < 1e-9);
    assert!(domain.distance(&max.x, &dvector![0.0, 0.0]) < 1e-9);
    assert_eq!((min.index, s1.index, s2.index, max.index), (0, 1, 1, 2));
    // Completion rule: (0,pi) keeps +e2; (pi,0) must flip to -e1 so the
    // joint frame stays positively oriented.
    assert!((&s1.e_minus - DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).norm() < 1e-9);
    assert!((&s1.e_plus - DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() < 1e-9);
    assert!((&s2.e_minus - DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() < 1e-9);
    assert!((&s2.e_plus - DMatrix::from_column_slice(2, 1, &[-1.0, 0.0])).norm() < 1e-9);
    assert_eq!(max.e_minus.ncols(), 2);
    assert!(max.e_minus.determinant().abs() > 0.9);
}

#[test]
fn corner_cylinder_generators_sit_on_the_depth_two_circle() {
    let domain = Domain::product(vec![
        Factor::Circle { period: TAU },
        Factor::Interval { lo: 0.0, hi: 1.0 },
        Factor::Interval { lo: 0.0, hi: 1.0 },
    ])
    .unwrap();
    let (domain, field, tol) = setup(domain, "cos(x1) - x2 - x3");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.is_empty());
    assert_eq!(set.generators.len(), 2);
    for id in 0..2 {
        let p = set.generator(id);
        assert_eq!(p.stratum.depth(), 2);
        assert!((p.x[1] - 1.0).abs() < 1e-9 && (p.x[2] - 1.0).abs() < 1e-9);
    }
    assert_eq!(set.generator(0).index, 0);
    assert_eq!(set.generator(1).index, 1);
}

#[test]
fn skew_metric_frames_are_metric_orthonormal() {
    let domain = unit_square();
    let expr = parse("-(x1 - 0.5)^2 - (x2 - 0.5)^2 - x1*x2", 2).unwrap();
    let metric = Metric::Constant(dmatrix![1.0, 0.3; 0.3, 1.0]);
    let field = ScalarField::new(expr, &metric, 2).unwrap();
    let tol = Tolerances::for_domain(&domain);
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    let interior: Vec<&CriticalPoint> = set
        .points
        .iter()
        .filter(|p| p.stratum.depth() == 0)
        .collect();
    assert_eq!(interior.len(), 1);
    let p = interior[0];
    assert!(p.essential && p.index == 2);
    assert!((&p.x - dvector![1.0 / 3.0, 1.0 / 3.0]).norm() < 1e-9);
    let g = field.metric().matrix();
    let gram = p.e_minus.transpose() * &g * &p.e_minus;
    assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-9);
}

#[test]
fn index_matches_inertia_of_the_reduced_hessian() {
    let (domain, field, tol) = setup(torus(), "cos(x1) + cos(x2)");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    for &i in &set.generators {
        let p = &set.points[i];
        let basis = &domain.face(&p.stratum).unwrap().basis;
        let (_, _, h) = field.hessian(&p.x).unwrap();
        let hr = basis.transpose() * h * basis;
        let (neg, zero, _) = numcheck::ldlt_inertia(&hr, 1e-10);
        assert_eq!(zero, 0);
        assert_eq!(neg, p.index);
    }
}

#[test]
fn degenerate_circle_of_rest_points_is_fatal() {
    let (domain, field, tol) = setup(torus(), "cos(x1)");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.fatal());
    assert!(set
        .violations
        .iter()
        .any(|v| v.kind == ViolationKind::DegenerateRestPoint));
    // Nothing degenerate may slip into the generator list.
    assert!(set.generators.iter().all(|&i| !set.points[i].degenerate));
}

#[test]
fn flat_edge_restriction_is_fatal_but_inward_flat_edge_is_advisory() {
    let (domain, field, tol) = setup(unit_square(), "x2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.fatal());
    // Bottom edge: every point is a degenerate rest point.
    assert!(set
        .violations
        .iter()
        .any(|v| v.fatal && v.kind == ViolationKind::DegenerateRestPoint));
    // Top edge: degenerate restriction, but the descent escapes inward.
    assert!(set.violations.iter().any(|v| {
        !v.fatal && v.kind == ViolationKind::DegenerateRestriction { escapes: true }
    }));
}

#[test]
fn transit_points_carry_no_frames() {
    let (domain, field, tol) = setup(unit_square(), "x1 + x2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    for p in set.points.iter().filter(|p| !p.essential) {
        assert_eq!(p.e_minus.ncols(), 0);
        assert_eq!(p.e_plus.ncols(), 0);
    }
}

#[test]
fn grid_duplicates_collapse_to_one_point() {
    // All interior seeds converge to the same maximum.
    let (domain, field, tol) = setup(unit_square(), "-(x1 - 0.5)^2 - (x2 - 0.5)^2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    let interior: Vec<&CriticalPoint> = set
        .points
        .iter()
        .filter(|p| p.stratum.depth() == 0)
        .collect();
    assert_eq!(interior.len(), 1);
    assert_eq!(interior[0].index, 2);
}

#[test]
fn vanishing_subset_projection_is_detected() {
    // At (0, 0) the descent is tangent to the left edge, so the projection
    // onto that edge vanishes while the corner itself is a rest point.
    let (domain, field, tol) = setup(unit_square(), "x1 + x2^2");
    let set = find_critical_points(&domain, &field, &tol).unwrap();
    assert!(set.violations.iter().any(|v| matches!(
        &v.kind,
        ViolationKind::VanishingSubsetProjection { subset } if !subset.is_empty()
    )));
}
