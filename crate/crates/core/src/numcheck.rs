//! Independent numerical cross-checks. Nothing in here is used by the main
//! pipeline; the test suites call these to validate derivatives, inertia
//! counts, and randomized inputs against implementations that share no code
//! with the things they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{Expression, Func};

/// Central-difference gradient of a scalar function. Returns `None` if any
/// sample point fails to evaluate.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h0: f64) -> Option<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let n = x.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let h = h0 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Some(g)
}

/// Central-difference Hessian (4-point stencil off the diagonal).
pub fn fd_hessian<F>(f: F, x: &DVector<f64>, h0: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let f0 = f(x)?;
    for i in 0..n {
        let hi = h0 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += hi;
        xm[i] -= hi;
        h[(i, i)] = (f(&xp)? + f(&xm)? - 2.0 * f0) / (hi * hi);
        for j in 0..i {
            let hj = h0 * (1.0 + x[j].abs());
            let mut a = x.clone();
            let mut b = x.clone();
            let mut c = x.clone();
            let mut d = x.clone();
            a[i] += hi;
            a[j] += hj;
            b[i] += hi;
            b[j] -= hj;
            c[i] -= hi;
            c[j] += hj;
            d[i] -= hi;
            d[j] -= hj;
            let v = (f(&a)? - f(&b)? - f(&c)? + f(&d)?) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Some(h)
}

/// Inertia (negative, zero, positive counts) of a symmetric matrix by a
/// pivoting LDL^T sweep — no eigenvalue code involved, so it can serve as an
/// oracle for eigendecomposition-based index counts.
pub fn ldlt_inertia(m: &DMatrix<f64>, tol: f64) -> (usize, usize, usize) {
    let size = m.nrows();
    assert_eq!(size, m.ncols());
    let mut a = m.clone();
    let mut live: Vec<usize> = (0..size).collect();
    let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);

    while !live.is_empty() {
        let mut dmax = 0.0f64;
        let mut didx = live[0];
        for &i in &live {
            if a[(i, i)].abs() > dmax {
                dmax = a[(i, i)].abs();
                didx = i;
            }
        }
        let mut omax = 0.0f64;
        let mut opair = (live[0], live[0]);
        for (s, &i) in live.iter().enumerate() {
            for &j in &live[s + 1..] {
                if a[(i, j)].abs() > omax {
                    omax = a[(i, j)].abs();
                    opair = (i, j);
                }
            }
        }

        if dmax <= tol && omax <= tol {
            zero += live.len();
            break;
        }

        if dmax >= 0.1 * omax {
            // 1x1 pivot at the largest diagonal entry.
            let r = didx;
            let d = a[(r, r)];
            if d > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            live.retain(|&i| i != r);
            for &i in &live {
                for &j in &live {
                    let upd = a[(i, r)] * a[(j, r)] / d;
                    a[(i, j)] -= upd;
                }
            }
        } else {
            // Off-diagonal dominates every diagonal entry: the 2x2 block has
            // negative determinant, hence one eigenvalue of each sign.
            let (p, q) = opair;
            let (app, apq, aqq) = (a[(p, p)], a[(p, q)], a[(q, q)]);
            let det = app * aqq - apq * apq;
            pos += 1;
            neg += 1;
            live.retain(|&i| i != p && i != q);
            for &i in &live {
                for &j in &live {
                    // a_i{pq} · B^{-1} · a_{pq}j with B the 2x2 pivot block
                    let bi = (aqq * a[(i, p)] - apq * a[(i, q)]) / det;
                    let ci = (-apq * a[(i, p)] + app * a[(i, q)]) / det;
                    let upd = bi * a[(j, p)] + ci * a[(j, q)];
                    a[(i, j)] -= upd;
                }
            }
        }
    }
    (neg, zero, pos)
}

/// Deterministic random expression sampler for derivative checks. Guards
/// every `sqrt`, `log`, and division so the sampled functions stay smooth on
/// [-2, 2]^n.
pub struct ExprSampler {
    rng: ChaCha8Rng,
    arity: usize,
}

impl ExprSampler {
    pub fn new(seed: u64, arity: usize) -> ExprSampler {
        ExprSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            arity,
        }
    }

    pub fn sample_point(&mut self) -> DVector<f64> {
        DVector::from_fn(self.arity, |_, _| self.rng.gen_range(-1.0..1.0))
    }

    pub fn sample(&mut self, depth: usize) -> Expression {
        if depth == 0 {
            return if self.rng.gen_bool(0.6) {
                Expression::Var(self.rng.gen_range(1..=self.arity))
            } else {
                Expression::Num((self.rng.gen_range(1..=10) as f64) * 0.25)
            };
        }
        let d = depth - 1;
        match self.rng.gen_range(0..10u32) {
            0 => Expression::Add(Box::new(self.sample(d)), Box::new(self.sample(d))),
            1 => Expression::Sub(Box::new(self.sample(d)), Box::new(self.sample(d))),
            2 => Expression::Mul(Box::new(self.sample(d)), Box::new(self.sample(d))),
            3 => Expression::Neg(Box::new(self.sample(d))),
            4 => Expression::Pow(Box::new(self.sample(d)), self.rng.gen_range(2..=3)),
            5 => Expression::Call(Func::Sin, Box::new(self.sample(d))),
            6 => Expression::Call(Func::Cos, Box::new(self.sample(d))),
            // exp of a damped argument keeps magnitudes tame
            7 => Expression::Call(
                Func::Exp,
                Box::new(Expression::Mul(
                    Box::new(Expression::Num(0.25)),
                    Box::new(Expression::Call(Func::Sin, Box::new(self.sample(d)))),
                )),
            ),
            // sqrt(2 + cos u) and log(2 + sin u) stay strictly positive
            8 => Expression::Call(
                Func::Sqrt,
                Box::new(Expression::Add(
                    Box::new(Expression::Num(2.0)),
                    Box::new(Expression::Call(Func::Cos, Box::new(self.sample(d)))),
                )),
            ),
            _ => Expression::Div(
                Box::new(self.sample(d)),
                Box::new(Expression::Add(
                    Box::new(Expression::Num(3.0)),
                    Box::new(Expression::Call(Func::Sin, Box::new(self.sample(d)))),
                )),
            ),
        }
    }
}
