use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::numcheck::{fd_gradient, fd_hessian, ExprSampler};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn parses_sum_of_variables() {
    let e = parse("x1 + x2", 2).unwrap();
    assert_eq!(
        e,
        Expression::Add(
            Box::new(Expression::Var(1)),
            Box::new(Expression::Var(2))
        )
    );
}

#[test]
fn parses_function_call_and_subtraction() {
    let e = parse("cos(x1) - x2", 2).unwrap();
    assert_eq!(
        e,
        Expression::Sub(
            Box::new(Expression::Call(Func::Cos, Box::new(Expression::Var(1)))),
            Box::new(Expression::Var(2))
        )
    );
}

#[test]
fn unary_minus_binds_below_power() {
    // -x1^2 must read as -(x1^2)
    let e = parse("-x1^2", 1).unwrap();
    assert_eq!(
        e,
        Expression::Neg(Box::new(Expression::Pow(Box::new(Expression::Var(1)), 2)))
    );
}

#[test]
fn power_applies_to_single_factor() {
    // x1^2/2 = (x1^2)/2
    let e = parse("x1^2/2", 1).unwrap();
    assert_eq!(
        e,
        Expression::Div(
            Box::new(Expression::Pow(Box::new(Expression::Var(1)), 2)),
            Box::new(Expression::Num(2.0))
        )
    );
}

#[test]
fn chained_power_is_rejected() {
    assert!(parse("x1^2^3", 1).is_err());
}

#[test]
fn malformed_operator_sequence_reports_offset() {
    let e = parse("x1 +* 2", 2).unwrap_err();
    // the unexpected token is the `*`
    assert_eq!(e.offset, 4);
}

#[test]
fn unknown_identifier_reports_offset() {
    let e = parse("foo(x1)", 1).unwrap_err();
    assert_eq!(e.offset, 0);
    assert!(e.message.contains("foo"), "{}", e.message);
}

#[test]
fn variable_beyond_arity_is_rejected() {
    let e = parse("x3", 2).unwrap_err();
    assert!(e.message.contains("arity"), "{}", e.message);
}

#[test]
fn x0_is_not_a_variable() {
    assert!(parse("x0", 2).is_err());
}

#[test]
fn function_requires_parentheses() {
    let e = parse("sin x1", 1).unwrap_err();
    assert_eq!(e.offset, 4);
}

#[test]
fn jet2_on_monomial_matches_hand_derivatives() {
    // f = x1^2 * x2 at (1, 2): value 2, gradient (4, 1), hessian [[4,2],[2,0]]
    let e = parse("x1^2*x2", 2).unwrap();
    let j = e.eval_jet2(&v(&[1.0, 2.0])).unwrap();
    assert_eq!(j.value, 2.0);
    assert_eq!(j.gradient, v(&[4.0, 1.0]));
    assert_eq!(j.hessian, DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 0.0]));
}

#[test]
fn division_by_zero_names_the_subterm() {
    let e = parse("x1/(x2 - 1)", 2).unwrap();
    let err = e.eval_jet2(&v(&[3.0, 1.0])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("division by zero"), "{msg}");
    assert!(msg.contains("x2 - 1"), "{msg}");
}

#[test]
fn log_of_nonpositive_names_the_subterm() {
    let e = parse("log(x1)", 1).unwrap();
    let err = e.eval(&v(&[-2.0])).unwrap_err();
    assert!(err.to_string().contains("log"), "{err}");
}

#[test]
fn negative_exponent_is_a_reciprocal() {
    let e = parse("x1^-2", 1).unwrap();
    let j = e.eval_jet2(&v(&[2.0])).unwrap();
    assert!((j.value - 0.25).abs() < 1e-15);
    assert!((j.gradient[0] - (-0.25)).abs() < 1e-15);
}

#[test]
fn jets_match_finite_differences_on_sampled_expressions() {
    let mut sampler = ExprSampler::new(7, 3);
    let mut checked = 0;
    for _ in 0..200 {
        let e = sampler.sample(3);
        let x = sampler.sample_point();
        let j = match e.eval_jet2(&x) {
            Ok(j) => j,
            Err(_) => continue,
        };
        let f = |p: &DVector<f64>| e.eval(p).ok();
        let g = fd_gradient(f, &x, 1e-5).unwrap();
        let h = fd_hessian(f, &x, 1e-4).unwrap();
        let gscale = 1.0 + j.gradient.amax();
        let hscale = 1.0 + j.hessian.amax();
        assert!(
            (&j.gradient - &g).amax() <= 1e-6 * gscale,
            "gradient mismatch for `{e}` at {x:?}: jet {:?} vs fd {:?}",
            j.gradient,
            g
        );
        assert!(
            (&j.hessian - &h).amax() <= 1e-5 * hscale,
            "hessian mismatch for `{e}` at {x:?}"
        );
        checked += 1;
    }
    assert!(checked > 150, "only {checked} sampled expressions evaluated");
}

#[test]
fn jet1_agrees_with_jet2() {
    let mut sampler = ExprSampler::new(11, 3);
    for _ in 0..200 {
        let e = sampler.sample(3);
        let x = sampler.sample_point();
        match (e.eval_jet1(&x), e.eval_jet2(&x)) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.value, b.value, "value mismatch for `{e}`");
                assert!((&a.gradient - &b.gradient).amax() <= 1e-14 * (1.0 + b.gradient.amax()));
            }
            (Err(a), Err(b)) => assert_eq!(a, b),
            (a, b) => panic!("jet1/jet2 disagree on failure for `{e}`: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn hessian_is_bitwise_symmetric() {
    let mut sampler = ExprSampler::new(23, 3);
    for _ in 0..300 {
        let e = sampler.sample(4);
        let x = sampler.sample_point();
        if let Ok(j) = e.eval_jet2(&x) {
            for i in 0..3 {
                for k in 0..i {
                    assert_eq!(
                        j.hessian[(i, k)].to_bits(),
                        j.hessian[(k, i)].to_bits(),
                        "asymmetric hessian for `{e}`"
                    );
                }
            }
        }
    }
}

fn arb_expr() -> impl Strategy<Value = Expression> {
    let leaf = prop_oneof![
        (1usize..=3).prop_map(Expression::Var),
        (0u32..400).prop_map(|k| Expression::Num(k as f64 * 0.125)),
    ];
    leaf.prop_recursive(4, 64, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expression::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expression::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expression::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expression::Div(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Expression::Neg(Box::new(a))),
            (inner.clone(), -5i32..=5)
                .prop_map(|(a, k)| Expression::Pow(Box::new(a), k)),
            (
                prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Exp),
                    Just(Func::Sqrt),
                    Just(Func::Log)
                ],
                inner
            )
                .prop_map(|(f, a)| Expression::Call(f, Box::new(a))),
        ]
    })
}

proptest! {
    #[test]
    fn print_parse_roundtrip(e in arb_expr()) {
        let printed = e.to_string();
        let reparsed = parse(&printed, 3)
            .unwrap_or_else(|err| panic!("`{printed}` failed to reparse: {err}"));
        prop_assert_eq!(&reparsed, &e);
        // and printing is stable under a second cycle
        let printed2 = reparsed.to_string();
        prop_assert_eq!(printed, printed2);
    }
}
