//! Scalar fields on a domain and the projected descent direction.
//!
//! The descent direction at a boundary point is not `-∇f` itself: the
//! negative gradient may point out of the domain. Instead it is the
//! g-orthogonal projection of `-∇f` onto the largest face through the point
//! for which the projected vector still points into the domain. Projecting
//! onto the point's own stratum always succeeds, so the cascade terminates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::domain::{Domain, DomainError, StratumId};
use crate::expr::{EvalError, Expression};
use crate::metric::{Metric, MetricError, PreparedMetric};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("function uses x{used} but the domain has dimension {dim}")]
    ArityMismatch { used: usize, dim: usize },
    #[error("evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Tolerance policy scaled to one domain. All comparisons elsewhere in the
/// crate go through these values.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Absolute slack for deciding a constraint is active.
    pub active: f64,
    /// Relative slack for tangent-cone membership.
    pub cone: f64,
    /// Relative slack (against `1 + |∇f|`) for declaring a descent vector
    /// stationary.
    pub stationary: f64,
    /// Relative slack for event-time bisection.
    pub event_time: f64,
    /// Relative slack for eigenvalue sign decisions.
    pub eig: f64,
    /// Absolute radius under which two critical-point candidates merge.
    pub crit: f64,
    /// Absolute slack when comparing function levels.
    pub level: f64,
}

impl Tolerances {
    pub fn for_domain(domain: &Domain) -> Tolerances {
        let d = domain.diameter().max(1.0);
        Tolerances {
            active: 1e-9 * d,
            cone: 1e-9,
            stationary: 1e-8,
            event_time: 1e-10,
            eig: 1e-8,
            crit: 1e-6 * d,
            level: 1e-9 * d,
        }
    }
}

/// A smooth function together with the metric used to raise its differential.
#[derive(Debug, Clone)]
pub struct ScalarField {
    expr: Expression,
    metric: PreparedMetric,
    n: usize,
}

impl ScalarField {
    pub fn new(expr: Expression, metric: &Metric, n: usize) -> Result<ScalarField, FieldError> {
        let used = expr.max_var();
        if used > n {
            return Err(FieldError::ArityMismatch { used, dim: n });
        }
        Ok(ScalarField {
            expr,
            metric: metric.prepare(n)?,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn expression(&self) -> &Expression {
        &self.expr
    }

    pub fn metric(&self) -> &PreparedMetric {
        &self.metric
    }

    fn eval_err(&self, x: &DVector<f64>, source: EvalError) -> FieldError {
        FieldError::Eval {
            point: x.iter().copied().collect(),
            source,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, FieldError> {
        self.expr.eval(x).map_err(|e| self.eval_err(x, e))
    }

    /// Differential `∂f/∂x_i` as a covector (no metric applied).
    pub fn differential(&self, x: &DVector<f64>) -> Result<DVector<f64>, FieldError> {
        let jet = self.expr.eval_jet1(x).map_err(|e| self.eval_err(x, e))?;
        Ok(jet.gradient)
    }

    /// Riemannian gradient `g⁻¹ ∂f`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, FieldError> {
        Ok(self.metric.raise(&self.differential(x)?))
    }

    /// Value, differential, and coordinate Hessian `∂²f/∂x_i∂x_j` in one
    /// pass.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), FieldError> {
        let jet = self.expr.eval_jet2(x).map_err(|e| self.eval_err(x, e))?;
        Ok((jet.value, jet.gradient, jet.hessian))
    }
}

/// Projected descent direction at a point, with the face the projection
/// landed on and the Riemannian gradient it came from.
#[derive(Debug, Clone)]
pub struct Descent {
    pub vector: DVector<f64>,
    pub face: StratumId,
    pub gradient: DVector<f64>,
}

impl Descent {
    /// Stationarity is judged relative to the gradient scale, so flat and
    /// steep functions are treated alike.
    pub fn is_stationary(&self, metric: &PreparedMetric, tol: &Tolerances) -> bool {
        metric.norm(&self.vector) < tol.stationary * (1.0 + metric.norm(&self.gradient))
    }
}

/// All faces whose closure contains the stratum (every subset of its active
/// set, the stratum itself included), largest face first.
fn faces_through(stratum: &StratumId) -> Vec<StratumId> {
    let mut out = stratum.adjacent_supersets();
    out.push(stratum.clone());
    out
}

/// The projected descent direction: project `-∇f` onto each face through the
/// point, largest first, and keep the first projection that does not point
/// out of the domain.
pub fn modified_gradient(
    domain: &Domain,
    field: &ScalarField,
    x: &DVector<f64>,
    stratum: &StratumId,
    tol: &Tolerances,
) -> Result<Descent, FieldError> {
    let gradient = field.gradient(x)?;
    let descent = -&gradient;
    for face in faces_through(stratum) {
        let w = domain.face_projection(&face, &descent, field.metric())?;
        if domain.is_inward_at(stratum, &w, tol.cone) {
            return Ok(Descent {
                vector: w,
                face,
                gradient,
            });
        }
    }
    unreachable!("projection onto the point's own stratum is always inward");
}

/// `-∇f` projected onto a fixed face, for integrating one sliding segment.
pub fn projected_descent(
    domain: &Domain,
    field: &ScalarField,
    face: &StratumId,
    x: &DVector<f64>,
) -> Result<DVector<f64>, FieldError> {
    let gradient = field.gradient(x)?;
    domain
        .face_projection(face, &(-gradient), field.metric())
        .map_err(FieldError::from)
}

/// Release indicator for a constraint held active by the sliding face: the
/// component of the one-face-larger projection along the constraint's inward
/// normal. A crossing from negative to positive means the descent direction
/// has started pulling away from the constraint.
pub fn release_multiplier(
    domain: &Domain,
    field: &ScalarField,
    face: &StratumId,
    constraint: usize,
    x: &DVector<f64>,
) -> Result<f64, FieldError> {
    debug_assert!(face.contains(constraint));
    let larger = StratumId::new(
        face.active()
            .iter()
            .copied()
            .filter(|&k| k != constraint)
            .collect(),
    );
    let w = projected_descent(domain, field, &larger, x)?;
    Ok(domain.constraints()[constraint].normal.dot(&w))
}
