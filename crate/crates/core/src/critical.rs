//! Critical points of every face restriction, their spectral data, and the
//! admissibility checks that decide whether the flow defines a cell complex.
//!
//! Each face of the domain carries a restriction of `f`; its critical points
//! are found by Newton iteration from a coarse grid. A restriction-critical
//! point is *essential* when the projected descent cascade is stationary
//! there — those points are the generators of the complex, graded by the
//! number of descending directions inside the face.

use nalgebra::{DMatrix, DVector};

use crate::domain::{Domain, StratumId};
use crate::field::{modified_gradient, FieldError, ScalarField, Tolerances};
use crate::linalg;
use crate::metric::PreparedMetric;

/// Newton seeds per face axis.
const GRID_PER_AXIS: usize = 8;
const NEWTON_MAX_ITERS: usize = 50;

/// A critical point of some face restriction, with the data the complex
/// needs when the point is a genuine rest point of the flow.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub x: DVector<f64>,
    /// Active set at the point.
    pub stratum: StratumId,
    pub value: f64,
    /// Rest point of the projected descent flow.
    pub essential: bool,
    /// Restricted Hessian has an eigenvalue indistinguishable from zero.
    pub degenerate: bool,
    /// Number of negative restricted-Hessian eigenvalues.
    pub index: usize,
    /// Restricted-Hessian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    /// Descending directions, g-orthonormal columns, n x index. Empty
    /// unless the point is an essential generator.
    pub e_minus: DMatrix<f64>,
    /// Completion of `e_minus` to an oriented frame: ascending directions
    /// inside the face, then the g-orthogonal complement of the face.
    pub e_plus: DMatrix<f64>,
}

/// Where a hypothesis of the construction fails, and how badly.
#[derive(Debug, Clone)]
pub struct MorseViolation {
    pub x: DVector<f64>,
    pub stratum: StratumId,
    pub kind: ViolationKind,
    /// Fatal violations invalidate the complex; the rest are advisory.
    pub fatal: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// Rest point whose restricted Hessian is degenerate: no well-defined
    /// cell dimension.
    DegenerateRestPoint,
    /// Degenerate restriction critical point that is not a rest point.
    /// Harmless when the raw descent direction escapes strictly inward,
    /// fatal when the flow could stall against it.
    DegenerateRestriction { escapes: bool },
    /// The descent projection onto a smaller face through the point
    /// vanishes: trajectories on that face would terminate somewhere the
    /// cell decomposition cannot see.
    VanishingSubsetProjection { subset: Vec<usize> },
    /// A held constraint released tangentially along a trajectory; the
    /// flow map is not differentiable across such an event.
    TangentialRelease { constraint: usize },
    /// A band of adjacent seeds all converged to the same saddle:
    /// connecting trajectories are not isolated.
    NonIsolatedConnections { source: usize, target: usize },
    /// The orientation frames at a crossing point were singular.
    DegenerateCrossingFrame { source: usize, target: usize },
}

/// Every face-restriction critical point of one problem, canonically
/// ordered, plus everything suspicious found along the way.
#[derive(Debug, Clone)]
pub struct CriticalSet {
    /// All restriction-critical points, sorted by (value, location).
    pub points: Vec<CriticalPoint>,
    /// Indices into `points` of the essential nondegenerate generators, in
    /// the same order; position in this list is the generator id.
    pub generators: Vec<usize>,
    pub violations: Vec<MorseViolation>,
}

impl CriticalSet {
    pub fn fatal(&self) -> bool {
        self.violations.iter().any(|v| v.fatal)
    }

    pub fn generator(&self, id: usize) -> &CriticalPoint {
        &self.points[self.generators[id]]
    }

    /// Generator count per index, length n+1.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let mut c = vec![0usize; n + 1];
        for &i in &self.generators {
            c[self.points[i].index] += 1;
        }
        c
    }
}

/// Locate every critical point of every face restriction and classify it.
pub fn find_critical_points(
    domain: &Domain,
    field: &ScalarField,
    tol: &Tolerances,
) -> Result<CriticalSet, FieldError> {
    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut violations: Vec<MorseViolation> = Vec::new();

    for face in domain.faces() {
        let active = StratumId::new(face.active.clone());
        let dim = face.basis.ncols();
        let mut found: Vec<DVector<f64>> = Vec::new();
        if dim == 0 {
            found.push(face.anchor.clone());
        } else {
            for seed in domain.face_grid(face, GRID_PER_AXIS) {
                let Some(x) = newton_on_face(domain, field, &face.basis, &seed) else {
                    continue;
                };
                // Keep only points interior to this face: anything that
                // drifted onto a smaller face belongs to that face's search.
                match domain.locate(&x, tol.active) {
                    Ok(s) if s == active => {}
                    _ => continue,
                }
                if found.iter().all(|y| domain.distance(&x, y) > tol.crit) {
                    found.push(x);
                }
            }
        }
        for x in found {
            let (point, mut viol) = classify(domain, field, tol, x, active.clone())?;
            points.push(point);
            violations.append(&mut viol);
        }
    }

    // Canonical order: by value, ties by coordinates.
    points.sort_by(|a, b| {
        a.value
            .partial_cmp(&b.value)
            .unwrap()
            .then_with(|| lex_cmp(&a.x, &b.x))
    });
    let generators = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.essential && !p.degenerate)
        .map(|(i, _)| i)
        .collect();

    Ok(CriticalSet {
        points,
        generators,
        violations,
    })
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (u, v) in a.iter().zip(b.iter()) {
        match u.partial_cmp(v).unwrap() {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Newton iteration for a critical point of `f` restricted to the affine
/// span of a face. Singular reduced Hessians fall back to a pseudo-inverse
/// step so that degenerate critical sets are still reached (and can then be
/// reported as violations) instead of being skipped.
fn newton_on_face(
    domain: &Domain,
    field: &ScalarField,
    basis: &DMatrix<f64>,
    seed: &DVector<f64>,
) -> Option<DVector<f64>> {
    let step_cap = 0.25 * domain.diameter().max(1.0);
    let mut x = seed.clone();
    for _ in 0..NEWTON_MAX_ITERS {
        let (_, df, h) = field.hessian(&x).ok()?;
        let reduced = basis.transpose() * &df;
        if reduced.norm() <= 1e-12 * (1.0 + df.norm()) {
            return Some(x);
        }
        let hr = basis.transpose() * &h * basis;
        let rhs = -reduced;
        let delta = match hr.clone().lu().solve(&rhs) {
            Some(d) => d,
            None => {
                let scale = hr.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
                hr.svd(true, true).solve(&rhs, 1e-12 * scale).ok()?
            }
        };
        let mut step = basis * delta;
        let len = step.norm();
        if !len.is_finite() {
            return None;
        }
        if len > step_cap {
            step *= step_cap / len;
        }
        x = domain.canonicalize(&(x + step));
    }
    let df = field.differential(&x).ok()?;
    if (basis.transpose() * &df).norm() <= 1e-10 * (1.0 + df.norm()) {
        Some(x)
    } else {
        None
    }
}

/// Spectral and flow classification of one restriction-critical point,
/// with the local admissibility checks.
fn classify(
    domain: &Domain,
    field: &ScalarField,
    tol: &Tolerances,
    x: DVector<f64>,
    stratum: StratumId,
) -> Result<(CriticalPoint, Vec<MorseViolation>), FieldError> {
    let g = field.metric();
    let n = domain.dim();
    let face = domain.face(&stratum)?;
    let basis = face.basis.clone();
    let dim = basis.ncols();
    let (value, _, hess) = field.hessian(&x)?;

    let (eigenvalues, vectors) = restricted_spectrum(&basis, &hess, g);
    let degenerate = if dim == 0 {
        false
    } else {
        let max = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eigenvalues.iter().any(|v| v.abs() < tol.eig * (1.0 + max))
    };
    let index = eigenvalues.iter().filter(|&&v| v < 0.0).count();

    let descent = modified_gradient(domain, field, &x, &stratum, tol)?;
    let essential = descent.is_stationary(g, tol);

    let mut violations = Vec::new();
    if degenerate {
        if essential {
            violations.push(MorseViolation {
                x: x.clone(),
                stratum: stratum.clone(),
                kind: ViolationKind::DegenerateRestPoint,
                fatal: true,
                detail: format!(
                    "rest point at {} has a zero eigenvalue in its restricted Hessian",
                    fmt_point(&x)
                ),
            });
        } else {
            let escapes = strictly_inward(domain, &stratum, &descent.gradient, tol);
            violations.push(MorseViolation {
                x: x.clone(),
                stratum: stratum.clone(),
                kind: ViolationKind::DegenerateRestriction { escapes },
                fatal: !escapes,
                detail: format!(
                    "degenerate restriction critical point at {}; descent {}",
                    fmt_point(&x),
                    if escapes {
                        "escapes strictly inward"
                    } else {
                        "does not escape the face"
                    }
                ),
            });
        }
    }
    // A descent projection vanishing on any smaller face through the point
    // would let trajectories on that face stall here.
    for subset in stratum.adjacent_supersets() {
        if subset == stratum {
            continue;
        }
        let w = domain.face_projection(&subset, &(-&descent.gradient), g)?;
        if g.norm(&w) < tol.stationary * (1.0 + g.norm(&descent.gradient)) {
            violations.push(MorseViolation {
                x: x.clone(),
                stratum: stratum.clone(),
                kind: ViolationKind::VanishingSubsetProjection {
                    subset: subset.active().to_vec(),
                },
                fatal: true,
                detail: format!(
                    "descent projection onto face {:?} vanishes at {}",
                    subset.active(),
                    fmt_point(&x)
                ),
            });
        }
    }

    let (e_minus, e_plus) = if essential && !degenerate {
        frames(&basis, &vectors, index, n, g)
    } else {
        (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
    };

    Ok((
        CriticalPoint {
            x,
            stratum,
            value,
            essential,
            degenerate,
            index,
            eigenvalues,
            e_minus,
            e_plus,
        },
        violations,
    ))
}

/// Eigen-decomposition of the restricted Hessian, generalized against the
/// restricted metric: returns ascending eigenvalues and coefficient vectors
/// `u` such that the columns of `B·u` are g-orthonormal.
fn restricted_spectrum(
    basis: &DMatrix<f64>,
    hess: &DMatrix<f64>,
    g: &PreparedMetric,
) -> (Vec<f64>, DMatrix<f64>) {
    let dim = basis.ncols();
    if dim == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let m = basis.transpose() * g.matrix() * basis;
    let hr = basis.transpose() * hess * basis;
    let chol = m
        .cholesky()
        .expect("restricted metric is positive definite");
    let l = chol.l();
    let li = l
        .clone()
        .try_inverse()
        .expect("Cholesky factor is invertible");
    let s = &li * hr * li.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut u = DMatrix::zeros(dim, dim);
    for (j, &i) in order.iter().enumerate() {
        u.set_column(j, &(li.transpose() * eig.eigenvectors.column(i)));
    }
    (values, u)
}

/// Descending-direction frame and its oriented completion. Columns are
/// sign-normalized (largest entry positive) for determinism; the last
/// column of `e_plus` is then flipped if needed so that the joint frame is
/// positively oriented.
fn frames(
    basis: &DMatrix<f64>,
    vectors: &DMatrix<f64>,
    index: usize,
    n: usize,
    g: &PreparedMetric,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = basis.ncols();
    let mut e_minus = DMatrix::zeros(n, index);
    for j in 0..index {
        e_minus.set_column(j, &normalize_sign(basis * vectors.column(j)));
    }
    let span: Vec<DVector<f64>> = (0..dim).map(|j| basis.column(j).into_owned()).collect();
    let outside = linalg::complement_basis(&span, n, |u, v| g.inner(u, v));
    let mut e_plus = DMatrix::zeros(n, n - index);
    for j in index..dim {
        e_plus.set_column(j - index, &normalize_sign(basis * vectors.column(j)));
    }
    for (j, v) in outside.iter().enumerate() {
        e_plus.set_column(dim - index + j, &normalize_sign(v.clone()));
    }
    if n > index {
        let mut joint = DMatrix::zeros(n, n);
        joint.columns_mut(0, index).copy_from(&e_minus);
        joint.columns_mut(index, n - index).copy_from(&e_plus);
        if joint.determinant() < 0.0 {
            let flipped = -e_plus.column(n - index - 1);
            e_plus.set_column(n - index - 1, &flipped);
        }
    }
    (e_minus, e_plus)
}

fn normalize_sign(v: DVector<f64>) -> DVector<f64> {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        -v
    } else {
        v
    }
}

/// Every active constraint sees a strictly positive inward component.
fn strictly_inward(
    domain: &Domain,
    stratum: &StratumId,
    gradient: &DVector<f64>,
    tol: &Tolerances,
) -> bool {
    let v = -gradient;
    let margin = tol.cone * (1.0 + v.norm());
    stratum
        .active()
        .iter()
        .all(|&k| domain.constraints()[k].normal.dot(&v) > margin)
}

fn fmt_point(x: &DVector<f64>) -> String {
    let coords: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", coords.join(", "))
}

#[cfg(test)]
mod tests;
