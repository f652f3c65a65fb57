//! Scalar fields over variables `x1..xn`: a small expression language with
//! exact first and second derivatives computed by forward-mode jets.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | atom ('^' int)?
//! atom   := number | ident '(' expr ')' | var | '(' expr ')'
//! var    := 'x' [1-9][0-9]*
//! ```
//!
//! `ident` is one of `sin`, `cos`, `exp`, `sqrt`, `log`; exponents are
//! integer literals only.

mod jet;
mod parse;

pub use jet::{Jet1, Jet2};
pub use parse::{parse, ParseError};

use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            _ => return None,
        })
    }
}

/// Expression tree. Variables are 1-based (`Var(1)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Var(usize),
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, i32),
    Call(Func, Box<Expression>),
}

/// Runtime evaluation failure; carries the offending subterm verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("{func}() of non-positive argument {arg} in `{term}`")]
    NonPositiveArg {
        func: &'static str,
        arg: f64,
        term: String,
    },
    #[error("zero raised to negative power in `{0}`")]
    ZeroToNegativePower(String),
    #[error("variable x{index} out of range for arity {arity}")]
    VarOutOfRange { index: usize, arity: usize },
}

impl Expression {
    /// Largest variable index referenced, 0 for constant expressions.
    pub fn max_var(&self) -> usize {
        match self {
            Expression::Num(_) => 0,
            Expression::Var(i) => *i,
            Expression::Neg(a) | Expression::Pow(a, _) | Expression::Call(_, a) => a.max_var(),
            Expression::Add(a, b)
            | Expression::Sub(a, b)
            | Expression::Mul(a, b)
            | Expression::Div(a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Value only. Used by finite-difference checks; keeps no derivative state.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64, EvalError> {
        Ok(match self {
            Expression::Num(c) => *c,
            Expression::Var(i) => {
                if *i == 0 || *i > x.len() {
                    return Err(EvalError::VarOutOfRange {
                        index: *i,
                        arity: x.len(),
                    });
                }
                x[*i - 1]
            }
            Expression::Neg(a) => -a.eval(x)?,
            Expression::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expression::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expression::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expression::Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero(self.to_string()));
                }
                a.eval(x)? / d
            }
            Expression::Pow(a, k) => {
                let v = a.eval(x)?;
                if v == 0.0 && *k < 0 {
                    return Err(EvalError::ZeroToNegativePower(self.to_string()));
                }
                v.powi(*k)
            }
            Expression::Call(f, a) => {
                let v = a.eval(x)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::NonPositiveArg {
                                func: "sqrt",
                                arg: v,
                                term: self.to_string(),
                            });
                        }
                        v.sqrt()
                    }
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(EvalError::NonPositiveArg {
                                func: "log",
                                arg: v,
                                term: self.to_string(),
                            });
                        }
                        v.ln()
                    }
                }
            }
        })
    }

    /// Value and gradient in one pass.
    pub fn eval_jet1(&self, x: &DVector<f64>) -> Result<Jet1, EvalError> {
        jet::eval1(self, x)
    }

    /// Value, gradient, and symmetric Hessian in one pass.
    pub fn eval_jet2(&self, x: &DVector<f64>) -> Result<Jet2, EvalError> {
        jet::eval2(self, x)
    }
}

// Precedence levels used by the printer: sums 1, products 2, unary minus 3,
// powers 4, atoms 5.
fn precedence(e: &Expression) -> u8 {
    match e {
        Expression::Add(..) | Expression::Sub(..) => 1,
        Expression::Mul(..) | Expression::Div(..) => 2,
        Expression::Neg(..) => 3,
        Expression::Pow(..) => 4,
        Expression::Num(_) | Expression::Var(_) | Expression::Call(..) => 5,
    }
}

fn fmt_child(f: &mut fmt::Formatter<'_>, child: &Expression, min: u8) -> fmt::Result {
    if precedence(child) < min {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Num(c) => write!(f, "{c}"),
            Expression::Var(i) => write!(f, "x{i}"),
            Expression::Neg(a) => {
                write!(f, "-")?;
                fmt_child(f, a, 3)
            }
            Expression::Add(a, b) => {
                fmt_child(f, a, 1)?;
                write!(f, " + ")?;
                fmt_child(f, b, 2)
            }
            Expression::Sub(a, b) => {
                fmt_child(f, a, 1)?;
                write!(f, " - ")?;
                fmt_child(f, b, 2)
            }
            Expression::Mul(a, b) => {
                fmt_child(f, a, 2)?;
                write!(f, "*")?;
                fmt_child(f, b, 3)
            }
            Expression::Div(a, b) => {
                fmt_child(f, a, 2)?;
                write!(f, "/")?;
                fmt_child(f, b, 3)
            }
            Expression::Pow(a, k) => {
                fmt_child(f, a, 5)?;
                write!(f, "^{k}")
            }
            Expression::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests;
