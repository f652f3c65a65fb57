//! Constant Riemannian metrics on flat domains: either the Euclidean inner
//! product or a fixed symmetric positive-definite matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    Constant(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric must be {expected}x{expected}, got {rows}x{cols}")]
    BadShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("metric is not symmetric: entry ({i},{j}) = {a} vs ({j},{i}) = {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("metric is not positive definite")]
    NotPositiveDefinite,
}

impl Metric {
    /// Validate against the ambient dimension and return a ready-to-use form
    /// with the Cholesky factor cached.
    pub fn prepare(&self, n: usize) -> Result<PreparedMetric, MetricError> {
        match self {
            Metric::Euclidean => Ok(PreparedMetric {
                mat: None,
                chol: None,
                n,
            }),
            Metric::Constant(g) => {
                if g.nrows() != n || g.ncols() != n {
                    return Err(MetricError::BadShape {
                        expected: n,
                        rows: g.nrows(),
                        cols: g.ncols(),
                    });
                }
                for i in 0..n {
                    for j in 0..i {
                        if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * (1.0 + g[(i, j)].abs()) {
                            return Err(MetricError::NotSymmetric {
                                i,
                                j,
                                a: g[(i, j)],
                                b: g[(j, i)],
                            });
                        }
                    }
                }
                let chol =
                    Cholesky::new(g.clone()).ok_or(MetricError::NotPositiveDefinite)?;
                Ok(PreparedMetric {
                    mat: Some(g.clone()),
                    chol: Some(chol),
                    n,
                })
            }
        }
    }
}

/// A validated metric with its factorization; all inner-product and
/// gradient-raising work goes through this.
#[derive(Debug, Clone)]
pub struct PreparedMetric {
    mat: Option<DMatrix<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    n: usize,
}

impl PreparedMetric {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_euclidean(&self) -> bool {
        self.mat.is_none()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.mat {
            Some(g) => g.clone(),
            None => DMatrix::identity(self.n, self.n),
        }
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match &self.mat {
            Some(g) => (u.transpose() * g * v)[(0, 0)],
            None => u.dot(v),
        }
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Raise a covector: solve G·v = w. For the coordinate differential of a
    /// function this produces the Riemannian gradient.
    pub fn raise(&self, w: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(w),
            None => w.clone(),
        }
    }

    /// Apply G to a vector (lower an index).
    pub fn lower(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.mat {
            Some(g) => g * v,
            None => v.clone(),
        }
    }
}
