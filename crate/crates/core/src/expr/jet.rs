//! Forward-mode jets. A `Jet2` carries (value, gradient, Hessian) and every
//! operation propagates all three by the chain rule, so a single tree walk
//! yields exact derivatives. The Hessian stays symmetric by construction:
//! each update is a sum of symmetric terms, and the mirrored entries are
//! produced by the same floating-point operations.

use nalgebra::{DMatrix, DVector};

use super::{EvalError, Expression, Func};

/// Value and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet1 {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Value, gradient, and symmetric Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl Jet2 {
    fn constant(c: f64, n: usize) -> Jet2 {
        Jet2 {
            value: c,
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
        }
    }

    fn variable(i: usize, x: f64, n: usize) -> Jet2 {
        let mut g = DVector::zeros(n);
        g[i] = 1.0;
        Jet2 {
            value: x,
            gradient: g,
            hessian: DMatrix::zeros(n, n),
        }
    }
}

// outer(u, v) + outer(v, u), symmetric exactly.
fn sym_outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| u[i] * v[j] + v[i] * u[j])
}

fn add2(a: Jet2, b: Jet2) -> Jet2 {
    Jet2 {
        value: a.value + b.value,
        gradient: a.gradient + b.gradient,
        hessian: a.hessian + b.hessian,
    }
}

fn sub2(a: Jet2, b: Jet2) -> Jet2 {
    Jet2 {
        value: a.value - b.value,
        gradient: a.gradient - b.gradient,
        hessian: a.hessian - b.hessian,
    }
}

fn mul2(a: &Jet2, b: &Jet2) -> Jet2 {
    Jet2 {
        value: a.value * b.value,
        gradient: &a.gradient * b.value + &b.gradient * a.value,
        hessian: &a.hessian * b.value + &b.hessian * a.value + sym_outer(&a.gradient, &b.gradient),
    }
}

// Unary chain rule: h(f∘u) = f'(u)·Hu + f''(u)·∇u∇uᵀ.
fn chain2(u: &Jet2, value: f64, d1: f64, d2: f64) -> Jet2 {
    let half = sym_outer(&u.gradient, &u.gradient); // 2·∇u∇uᵀ
    Jet2 {
        value,
        gradient: &u.gradient * d1,
        hessian: &u.hessian * d1 + half * (0.5 * d2),
    }
}

fn powi2(u: &Jet2, k: i32, whole: &Expression) -> Result<Jet2, EvalError> {
    if u.value == 0.0 && k < 0 {
        return Err(EvalError::ZeroToNegativePower(whole.to_string()));
    }
    let kf = k as f64;
    let value = u.value.powi(k);
    let d1 = kf * u.value.powi(k - 1);
    let d2 = kf * (kf - 1.0) * u.value.powi(k - 2);
    Ok(chain2(u, value, d1, d2))
}

fn call2(f: Func, u: &Jet2, whole: &Expression) -> Result<Jet2, EvalError> {
    let v = u.value;
    let (value, d1, d2) = match f {
        Func::Sin => (v.sin(), v.cos(), -v.sin()),
        Func::Cos => (v.cos(), -v.sin(), -v.cos()),
        Func::Exp => {
            let e = v.exp();
            (e, e, e)
        }
        Func::Sqrt => {
            if v <= 0.0 {
                return Err(EvalError::NonPositiveArg {
                    func: "sqrt",
                    arg: v,
                    term: whole.to_string(),
                });
            }
            let s = v.sqrt();
            (s, 0.5 / s, -0.25 / (s * v))
        }
        Func::Log => {
            if v <= 0.0 {
                return Err(EvalError::NonPositiveArg {
                    func: "log",
                    arg: v,
                    term: whole.to_string(),
                });
            }
            (v.ln(), 1.0 / v, -1.0 / (v * v))
        }
    };
    Ok(chain2(u, value, d1, d2))
}

pub(super) fn eval2(e: &Expression, x: &DVector<f64>) -> Result<Jet2, EvalError> {
    let n = x.len();
    Ok(match e {
        Expression::Num(c) => Jet2::constant(*c, n),
        Expression::Var(i) => {
            if *i == 0 || *i > n {
                return Err(EvalError::VarOutOfRange { index: *i, arity: n });
            }
            Jet2::variable(*i - 1, x[*i - 1], n)
        }
        Expression::Neg(a) => {
            let j = eval2(a, x)?;
            Jet2 {
                value: -j.value,
                gradient: -j.gradient,
                hessian: -j.hessian,
            }
        }
        Expression::Add(a, b) => add2(eval2(a, x)?, eval2(b, x)?),
        Expression::Sub(a, b) => sub2(eval2(a, x)?, eval2(b, x)?),
        Expression::Mul(a, b) => mul2(&eval2(a, x)?, &eval2(b, x)?),
        Expression::Div(a, b) => {
            let num = eval2(a, x)?;
            let den = eval2(b, x)?;
            if den.value == 0.0 {
                return Err(EvalError::DivisionByZero(e.to_string()));
            }
            // a/b = a · b^{-1}
            let r = den.value.recip();
            let recip = chain2(&den, r, -r * r, 2.0 * r * r * r);
            mul2(&num, &recip)
        }
        Expression::Pow(a, k) => powi2(&eval2(a, x)?, *k, e)?,
        Expression::Call(f, a) => call2(*f, &eval2(a, x)?, e)?,
    })
}

// The gradient-only walk mirrors eval2; it exists because flow integration
// evaluates the field thousands of times per trajectory and never needs the
// Hessian there.
pub(super) fn eval1(e: &Expression, x: &DVector<f64>) -> Result<Jet1, EvalError> {
    let n = x.len();
    Ok(match e {
        Expression::Num(c) => Jet1 {
            value: *c,
            gradient: DVector::zeros(n),
        },
        Expression::Var(i) => {
            if *i == 0 || *i > n {
                return Err(EvalError::VarOutOfRange { index: *i, arity: n });
            }
            let mut g = DVector::zeros(n);
            g[*i - 1] = 1.0;
            Jet1 {
                value: x[*i - 1],
                gradient: g,
            }
        }
        Expression::Neg(a) => {
            let j = eval1(a, x)?;
            Jet1 {
                value: -j.value,
                gradient: -j.gradient,
            }
        }
        Expression::Add(a, b) => {
            let (p, q) = (eval1(a, x)?, eval1(b, x)?);
            Jet1 {
                value: p.value + q.value,
                gradient: p.gradient + q.gradient,
            }
        }
        Expression::Sub(a, b) => {
            let (p, q) = (eval1(a, x)?, eval1(b, x)?);
            Jet1 {
                value: p.value - q.value,
                gradient: p.gradient - q.gradient,
            }
        }
        Expression::Mul(a, b) => {
            let (p, q) = (eval1(a, x)?, eval1(b, x)?);
            Jet1 {
                value: p.value * q.value,
                gradient: &p.gradient * q.value + &q.gradient * p.value,
            }
        }
        Expression::Div(a, b) => {
            let (p, q) = (eval1(a, x)?, eval1(b, x)?);
            if q.value == 0.0 {
                return Err(EvalError::DivisionByZero(e.to_string()));
            }
            let r = q.value.recip();
            Jet1 {
                value: p.value * r,
                gradient: &p.gradient * r - &q.gradient * (p.value * r * r),
            }
        }
        Expression::Pow(a, k) => {
            let j = eval1(a, x)?;
            if j.value == 0.0 && *k < 0 {
                return Err(EvalError::ZeroToNegativePower(e.to_string()));
            }
            let kf = *k as f64;
            Jet1 {
                value: j.value.powi(*k),
                gradient: &j.gradient * (kf * j.value.powi(*k - 1)),
            }
        }
        Expression::Call(f, a) => {
            let j = eval1(a, x)?;
            let v = j.value;
            let (value, d1) = match f {
                Func::Sin => (v.sin(), v.cos()),
                Func::Cos => (v.cos(), -v.sin()),
                Func::Exp => {
                    let w = v.exp();
                    (w, w)
                }
                Func::Sqrt => {
                    if v <= 0.0 {
                        return Err(EvalError::NonPositiveArg {
                            func: "sqrt",
                            arg: v,
                            term: e.to_string(),
                        });
                    }
                    let s = v.sqrt();
                    (s, 0.5 / s)
                }
                Func::Log => {
                    if v <= 0.0 {
                        return Err(EvalError::NonPositiveArg {
                            func: "log",
                            arg: v,
                            term: e.to_string(),
                        });
                    }
                    (v.ln(), 1.0 / v)
                }
            };
            Jet1 {
                value,
                gradient: &j.gradient * d1,
            }
        }
    })
}
