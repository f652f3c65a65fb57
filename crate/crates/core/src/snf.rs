//! Integer Smith normal form with unimodular certificates.
//!
//! Every call re-derives `U*A*V = S` from the recorded transforms and checks
//! `|det U| = |det V| = 1` exactly, so a wrong reduction can never leak into
//! a homology computation.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

#[derive(Debug, Clone)]
pub struct Snf {
    /// Diagonal form, rows x cols of the input.
    pub s: Vec<Vec<BigInt>>,
    /// Left unimodular transform, rows x rows.
    pub u: Vec<Vec<BigInt>>,
    /// Right unimodular transform, cols x cols.
    pub v: Vec<Vec<BigInt>>,
    pub rank: usize,
    /// Nonzero diagonal entries, each dividing the next.
    pub invariant_factors: Vec<BigInt>,
}

pub fn smith_normal_form(a: &[Vec<i64>]) -> Snf {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    assert!(a.iter().all(|r| r.len() == cols), "ragged input matrix");

    let orig: Vec<Vec<BigInt>> = a
        .iter()
        .map(|r| r.iter().map(|&x| BigInt::from(x)).collect())
        .collect();
    let mut s = orig.clone();
    let mut u = identity(rows);
    let mut v = identity(cols);

    for t in 0..rows.min(cols) {
        if !move_pivot(&mut s, &mut u, &mut v, t) {
            break;
        }
        loop {
            if !clear_pivot_cross(&mut s, &mut u, &mut v, t) {
                continue;
            }
            // Pivot must divide the rest of the submatrix; folding an
            // offending row into the pivot row forces the next sweep to
            // shrink the pivot.
            match first_nondivisible(&s, t) {
                Some(i) => add_row(&mut s, &mut u, t, i),
                None => break,
            }
        }
        if s[t][t].is_negative() {
            negate_row(&mut s, &mut u, t);
        }
    }

    let rank = (0..rows.min(cols)).filter(|&t| !s[t][t].is_zero()).count();
    let invariant_factors: Vec<BigInt> = (0..rank).map(|t| s[t][t].clone()).collect();

    verify(&orig, &s, &u, &v, rank);

    Snf {
        s,
        u,
        v,
        rank,
        invariant_factors,
    }
}

/// Exact determinant by fraction-free (Bareiss) elimination.
pub fn determinant(m: &[Vec<BigInt>]) -> BigInt {
    let n = m.len();
    assert!(m.iter().all(|r| r.len() == n), "determinant of non-square");
    if n == 0 {
        return BigInt::one();
    }
    let mut a = m.to_vec();
    let mut sign = 1i32;
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            let Some(i) = (k + 1..n).find(|&i| !a[i][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, i);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                // Bareiss: this division is exact.
                a[i][j] = (&a[i][j] * &a[k][k] - &a[i][k] * &a[k][j]) / &prev;
            }
            a[i][k] = BigInt::zero();
        }
        prev = a[k][k].clone();
    }
    let d = a[n - 1][n - 1].clone();
    if sign < 0 {
        -d
    } else {
        d
    }
}

fn identity(n: usize) -> Vec<Vec<BigInt>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect()
}

/// Bring the smallest nonzero entry of the trailing submatrix to (t, t).
/// False when the submatrix is all zero.
fn move_pivot(
    s: &mut [Vec<BigInt>],
    u: &mut [Vec<BigInt>],
    v: &mut [Vec<BigInt>],
    t: usize,
) -> bool {
    let rows = s.len();
    let cols = s[0].len();
    let mut best: Option<(usize, usize)> = None;
    for i in t..rows {
        for j in t..cols {
            if s[i][j].is_zero() {
                continue;
            }
            match best {
                Some((bi, bj)) if s[bi][bj].magnitude() <= s[i][j].magnitude() => {}
                _ => best = Some((i, j)),
            }
        }
    }
    let Some((i, j)) = best else {
        return false;
    };
    if i != t {
        s.swap(i, t);
        u.swap(i, t);
    }
    if j != t {
        for row in s.iter_mut() {
            row.swap(j, t);
        }
        for row in v.iter_mut() {
            row.swap(j, t);
        }
    }
    true
}

/// One sweep clearing column and row `t` past the pivot with Euclidean
/// steps. A leftover remainder is swapped into the pivot (strictly smaller
/// magnitude) and the sweep reports false so the caller restarts.
fn clear_pivot_cross(
    s: &mut [Vec<BigInt>],
    u: &mut [Vec<BigInt>],
    v: &mut [Vec<BigInt>],
    t: usize,
) -> bool {
    let rows = s.len();
    let cols = s[0].len();
    for i in t + 1..rows {
        if s[i][t].is_zero() {
            continue;
        }
        let q = &s[i][t] / &s[t][t];
        sub_row(s, u, i, t, &q);
        if !s[i][t].is_zero() {
            s.swap(i, t);
            u.swap(i, t);
            return false;
        }
    }
    for j in t + 1..cols {
        if s[t][j].is_zero() {
            continue;
        }
        let q = &s[t][j] / &s[t][t];
        sub_col(s, v, j, t, &q);
        if !s[t][j].is_zero() {
            for row in s.iter_mut() {
                row.swap(j, t);
            }
            for row in v.iter_mut() {
                row.swap(j, t);
            }
            return false;
        }
    }
    true
}

fn first_nondivisible(s: &[Vec<BigInt>], t: usize) -> Option<usize> {
    let rows = s.len();
    let cols = s[0].len();
    for i in t + 1..rows {
        for j in t + 1..cols {
            if !(&s[i][j] % &s[t][t]).is_zero() {
                return Some(i);
            }
        }
    }
    None
}

/// row_i -= q * row_t on S, mirrored on U.
fn sub_row(s: &mut [Vec<BigInt>], u: &mut [Vec<BigInt>], i: usize, t: usize, q: &BigInt) {
    let cols = s[0].len();
    for j in 0..cols {
        let d = q * &s[t][j];
        s[i][j] -= d;
    }
    for j in 0..u[0].len() {
        let d = q * &u[t][j];
        u[i][j] -= d;
    }
}

/// col_j -= q * col_t on S, mirrored on V.
fn sub_col(s: &mut [Vec<BigInt>], v: &mut [Vec<BigInt>], j: usize, t: usize, q: &BigInt) {
    for row in s.iter_mut() {
        let d = q * &row[t];
        row[j] -= d;
    }
    for row in v.iter_mut() {
        let d = q * &row[t];
        row[j] -= d;
    }
}

fn add_row(s: &mut [Vec<BigInt>], u: &mut [Vec<BigInt>], t: usize, i: usize) {
    let cols = s[0].len();
    for j in 0..cols {
        let d = s[i][j].clone();
        s[t][j] += d;
    }
    for j in 0..u[0].len() {
        let d = u[i][j].clone();
        u[t][j] += d;
    }
}

fn negate_row(s: &mut [Vec<BigInt>], u: &mut [Vec<BigInt>], t: usize) {
    for x in s[t].iter_mut() {
        *x = -x.clone();
    }
    for x in u[t].iter_mut() {
        *x = -x.clone();
    }
}

fn mat_mul(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let rows = a.len();
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| (0..inner).map(|k| &a[i][k] * &b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn verify(orig: &[Vec<BigInt>], s: &[Vec<BigInt>], u: &[Vec<BigInt>], v: &[Vec<BigInt>], rank: usize) {
    let uav = mat_mul(&mat_mul(u, orig), v);
    assert_eq!(uav, s, "transforms do not reproduce the diagonal form");
    assert!(
        determinant(u).abs() == BigInt::one(),
        "left transform is not unimodular"
    );
    assert!(
        determinant(v).abs() == BigInt::one(),
        "right transform is not unimodular"
    );
    for (i, row) in s.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            assert!(i == j || x.is_zero(), "off-diagonal residue after reduction");
        }
    }
    for t in 1..rank {
        assert!(
            (&s[t][t] % &s[t - 1][t - 1]).is_zero(),
            "diagonal entries out of divisibility order"
        );
    }
}
