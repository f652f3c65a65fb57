//! Small shared linear-algebra helpers: Gram–Schmidt with a pluggable inner
//! product, orthonormal complements, and sign-of-determinant.

use nalgebra::{DMatrix, DVector};

const DROP_TOL: f64 = 1e-10;

/// Orthonormalize `vecs` with respect to `inner`, dropping near-dependent
/// entries. Order-preserving, hence deterministic.
pub(crate) fn gram_schmidt<F>(vecs: &[DVector<f64>], inner: F) -> Vec<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vecs {
        let mut r = v.clone();
        // re-orthogonalize once for stability
        for _ in 0..2 {
            for q in &out {
                let c = inner(&r, q);
                r -= q * c;
            }
        }
        let norm = inner(&r, &r).max(0.0).sqrt();
        let scale = inner(v, v).max(0.0).sqrt().max(1.0);
        if norm > DROP_TOL * scale {
            out.push(r / norm);
        }
    }
    out
}

/// Orthonormal basis (w.r.t. `inner`) of the complement of `span(space)` in
/// R^n, built by sweeping the standard basis. `space` need not be
/// orthonormal.
pub(crate) fn complement_basis<F>(
    space: &[DVector<f64>],
    n: usize,
    inner: F,
) -> Vec<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let ortho = gram_schmidt(space, &inner);
    let target = n - ortho.len();
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        if accepted.len() == target {
            break;
        }
        let mut r = DVector::zeros(n);
        r[i] = 1.0;
        for _ in 0..2 {
            for q in ortho.iter().chain(accepted.iter()) {
                let c = inner(&r, q);
                r -= q * c;
            }
        }
        let norm = inner(&r, &r).max(0.0).sqrt();
        if norm > DROP_TOL {
            accepted.push(r / norm);
        }
    }
    assert_eq!(
        accepted.len(),
        target,
        "complement basis construction fell short"
    );
    accepted
}

/// Rank of a set of vectors under the Euclidean inner product.
pub(crate) fn rank_of(vecs: &[DVector<f64>]) -> usize {
    gram_schmidt(vecs, |a, b| a.dot(b)).len()
}

/// Stack column vectors into a matrix; an empty list yields an n x 0 matrix.
pub(crate) fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}
