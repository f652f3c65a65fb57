//! Compact flat domains with corners and their face lattices.
//!
//! Two shapes are supported: products of closed intervals and circles, and
//! bounded simple polytopes `A·x ≤ b`. Both present the same interface to the
//! rest of the crate: a list of affine constraints `c_k(x) ≥ 0`, a lattice of
//! faces keyed by which constraints are active, and per-face direction
//! spaces. A point sitting on `ℓ` independent constraints has corner depth
//! `ℓ`; locally the domain looks like the model cone
//! `{w ∈ R^n : w_i ≥ 0 for i > n-ℓ}`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{columns_to_matrix, complement_basis, rank_of};
use crate::metric::PreparedMetric;

/// One factor of a product domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Interval { lo: f64, hi: f64 },
    Circle { period: f64 },
}

#[derive(Debug, Clone)]
enum Shape {
    Product(Vec<Factor>),
    Polytope,
}

/// Affine constraint `normal·x - rhs ≥ 0`; `normal` points into the domain.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub normal: DVector<f64>,
    pub rhs: f64,
    pub label: String,
}

impl Constraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.rhs
    }
}

/// A stratum, identified by its sorted set of active constraint ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumId {
    active: Vec<usize>,
}

impl StratumId {
    pub fn new(mut active: Vec<usize>) -> StratumId {
        active.sort_unstable();
        active.dedup();
        StratumId { active }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn depth(&self) -> usize {
        self.active.len()
    }

    pub fn contains(&self, constraint: usize) -> bool {
        self.active.binary_search(&constraint).is_ok()
    }

    /// Strictly larger faces adjacent to this stratum: all proper subsets of
    /// the active set, in decreasing dimension then lexicographic order.
    pub fn adjacent_supersets(&self) -> Vec<StratumId> {
        let mut out = Vec::new();
        for size in 0..self.active.len() {
            subsets_of_size(&self.active, size, &mut out);
        }
        out
    }
}

fn subsets_of_size(items: &[usize], size: usize, out: &mut Vec<StratumId>) {
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<StratumId>) {
        if cur.len() == size {
            out.push(StratumId::new(cur.clone()));
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut cur = Vec::new();
    rec(items, size, 0, &mut cur, out);
}

/// Geometric data for one face of the lattice.
#[derive(Debug, Clone)]
pub struct Face {
    pub active: Vec<usize>,
    /// Euclidean-orthonormal basis of the face's direction space, n×(n-ℓ).
    pub basis: DMatrix<f64>,
    /// A point on the face's affine hull.
    pub anchor: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("interval factor {index} has lo {lo} >= hi {hi}")]
    EmptyInterval { index: usize, lo: f64, hi: f64 },
    #[error("circle factor {index} has non-positive period {period}")]
    BadPeriod { index: usize, period: f64 },
    #[error("polytope data shapes disagree: A is {rows}x{cols}, b has {blen} entries")]
    ShapeMismatch { rows: usize, cols: usize, blen: usize },
    #[error("polytope has a zero facet normal (row {row})")]
    ZeroNormal { row: usize },
    #[error("polytope unbounded: the recession cone contains a ray")]
    Unbounded,
    #[error("polytope is empty")]
    Empty,
    #[error("polytope is not simple: vertex at {location:?} lies on {count} facets in dimension {dim}")]
    NotSimple {
        location: Vec<f64>,
        count: usize,
        dim: usize,
    },
    #[error("point {point:?} violates constraint `{label}` by {violation:.3e}")]
    OutsideDomain {
        point: Vec<f64>,
        label: String,
        violation: f64,
    },
    #[error("active constraints at {point:?} are linearly dependent (reentrant corner)")]
    ReentrantCorner { point: Vec<f64> },
    #[error("interval factor {index} is thinner than the activity tolerance at {point:?}")]
    DegenerateThickness { index: usize, point: Vec<f64> },
    #[error("no face with active set {active:?}")]
    UnknownFace { active: Vec<usize> },
}

/// True iff `w` lies in the model cone of depth `ℓ`: last `ℓ` coordinates
/// nonnegative. Boundary-tangent vectors (zero coordinate) count as inside.
pub fn model_cone_contains(w: &DVector<f64>, depth: usize, tol: f64) -> bool {
    let n = w.len();
    assert!(depth <= n, "cone depth exceeds dimension");
    (n - depth..n).all(|i| w[i] >= -tol)
}

#[derive(Debug, Clone)]
pub struct Domain {
    shape: Shape,
    n: usize,
    constraints: Vec<Constraint>,
    faces: BTreeMap<Vec<usize>, Face>,
    vertices: Vec<DVector<f64>>,
    diameter: f64,
}

impl Domain {
    pub fn product(factors: Vec<Factor>) -> Result<Domain, DomainError> {
        let n = factors.len();
        let mut constraints = Vec::new();
        for (i, f) in factors.iter().enumerate() {
            match f {
                Factor::Interval { lo, hi } => {
                    if lo >= hi {
                        return Err(DomainError::EmptyInterval {
                            index: i,
                            lo: *lo,
                            hi: *hi,
                        });
                    }
                    let mut n_lo = DVector::zeros(n);
                    n_lo[i] = 1.0;
                    constraints.push(Constraint {
                        normal: n_lo,
                        rhs: *lo,
                        label: format!("x{} >= {}", i + 1, lo),
                    });
                    let mut n_hi = DVector::zeros(n);
                    n_hi[i] = -1.0;
                    constraints.push(Constraint {
                        normal: n_hi,
                        rhs: -*hi,
                        label: format!("x{} <= {}", i + 1, hi),
                    });
                }
                Factor::Circle { period } => {
                    if *period <= 0.0 {
                        return Err(DomainError::BadPeriod {
                            index: i,
                            period: *period,
                        });
                    }
                }
            }
        }

        let faces = product_faces(&factors, &constraints, n);
        let vertices = product_vertices(&factors, n);
        let diameter = factors
            .iter()
            .map(|f| match f {
                Factor::Interval { lo, hi } => (hi - lo) * (hi - lo),
                Factor::Circle { period } => (period / 2.0) * (period / 2.0),
            })
            .sum::<f64>()
            .sqrt();

        Ok(Domain {
            shape: Shape::Product(factors),
            n,
            constraints,
            faces,
            vertices,
            diameter,
        })
    }

    pub fn polytope(a: DMatrix<f64>, b: DVector<f64>) -> Result<Domain, DomainError> {
        let (m, n) = (a.nrows(), a.ncols());
        if b.len() != m || n == 0 || m == 0 {
            return Err(DomainError::ShapeMismatch {
                rows: m,
                cols: n,
                blen: b.len(),
            });
        }
        // Constraint form: b_k - a_k·x ≥ 0, inward normal -a_k.
        let mut constraints = Vec::new();
        for k in 0..m {
            let row: DVector<f64> = a.row(k).transpose();
            if row.norm() < 1e-14 {
                return Err(DomainError::ZeroNormal { row: k });
            }
            constraints.push(Constraint {
                normal: -&row,
                rhs: -b[k],
                label: format!("facet {k}"),
            });
        }

        check_bounded(&a, n, m)?;
        let vertices = polytope_vertices(&constraints, n)?;
        if vertices.is_empty() {
            return Err(DomainError::Empty);
        }

        let mut diameter = 0.0f64;
        for (i, p) in vertices.iter().enumerate() {
            for q in &vertices[i + 1..] {
                diameter = diameter.max((p - q).norm());
            }
        }

        let faces = polytope_faces(&constraints, n);

        Ok(Domain {
            shape: Shape::Polytope,
            n,
            constraints,
            faces,
            vertices,
            diameter,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The factor list for product shapes; absent for polytopes.
    pub fn factors(&self) -> Option<&[Factor]> {
        match &self.shape {
            Shape::Product(factors) => Some(factors),
            Shape::Polytope => None,
        }
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.values()
    }

    pub fn face(&self, stratum: &StratumId) -> Result<&Face, DomainError> {
        self.faces
            .get(stratum.active())
            .ok_or_else(|| DomainError::UnknownFace {
                active: stratum.active().to_vec(),
            })
    }

    pub fn stratum_dim(&self, stratum: &StratumId) -> usize {
        self.n - stratum.depth()
    }

    /// Wrap circle coordinates into [0, period); identity elsewhere.
    pub fn canonicalize(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.shape {
            Shape::Product(factors) => {
                let mut y = x.clone();
                for (i, f) in factors.iter().enumerate() {
                    if let Factor::Circle { period } = f {
                        y[i] = y[i].rem_euclid(*period);
                    }
                }
                y
            }
            Shape::Polytope => x.clone(),
        }
    }

    /// Distance that respects circle wrapping.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match &self.shape {
            Shape::Product(factors) => {
                let mut s = 0.0;
                for (i, f) in factors.iter().enumerate() {
                    let d = match f {
                        Factor::Circle { period } => {
                            let r = (x[i] - y[i]).rem_euclid(*period);
                            r.min(period - r)
                        }
                        Factor::Interval { .. } => x[i] - y[i],
                    };
                    s += d * d;
                }
                s.sqrt()
            }
            Shape::Polytope => (x - y).norm(),
        }
    }

    /// Feasibility check: every constraint within `tol` of nonnegative.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.constraints.iter().all(|c| c.value(x) >= -tol)
    }

    /// Identify the stratum of `x`: which constraints are active within
    /// `tol`. Errors if `x` is outside the domain or sits on a dependent
    /// (reentrant) set of constraints.
    pub fn locate(&self, x: &DVector<f64>, tol: f64) -> Result<StratumId, DomainError> {
        let mut active = Vec::new();
        for (k, c) in self.constraints.iter().enumerate() {
            let v = c.value(x);
            if v < -tol {
                return Err(DomainError::OutsideDomain {
                    point: x.iter().copied().collect(),
                    label: c.label.clone(),
                    violation: -v,
                });
            }
            if v <= tol {
                active.push(k);
            }
        }
        if let Shape::Product(factors) = &self.shape {
            // both ends of one interval active means the interval is thinner
            // than the tolerance
            let mut seen = vec![0usize; factors.len()];
            for &k in &active {
                let axis = self.constraints[k]
                    .normal
                    .iter()
                    .position(|&v| v != 0.0)
                    .unwrap();
                seen[axis] += 1;
                if seen[axis] > 1 {
                    return Err(DomainError::DegenerateThickness {
                        index: axis,
                        point: x.iter().copied().collect(),
                    });
                }
            }
        } else {
            let normals: Vec<DVector<f64>> = active
                .iter()
                .map(|&k| self.constraints[k].normal.clone())
                .collect();
            if rank_of(&normals) < normals.len() {
                return Err(DomainError::ReentrantCorner {
                    point: x.iter().copied().collect(),
                });
            }
        }
        Ok(StratumId::new(active))
    }

    /// Tangent-cone membership at `x`: `v` must not cross any active
    /// constraint. Boundary-tangent directions count as inward.
    pub fn is_inward(&self, x: &DVector<f64>, v: &DVector<f64>, active_tol: f64, cone_tol: f64) -> Result<bool, DomainError> {
        let stratum = self.locate(x, active_tol)?;
        Ok(self.is_inward_at(&stratum, v, cone_tol))
    }

    /// Cone test against a known active set.
    pub fn is_inward_at(&self, stratum: &StratumId, v: &DVector<f64>, cone_tol: f64) -> bool {
        let tol = cone_tol * (1.0 + v.norm());
        stratum
            .active()
            .iter()
            .all(|&k| self.constraints[k].normal.dot(v) >= -tol)
    }

    /// Metric-orthogonal projection of `v` onto the direction space of a
    /// face. The residual `v - result` is g-orthogonal to the face.
    pub fn face_projection(
        &self,
        stratum: &StratumId,
        v: &DVector<f64>,
        g: &PreparedMetric,
    ) -> Result<DVector<f64>, DomainError> {
        let face = self.face(stratum)?;
        Ok(project_onto_basis(&face.basis, v, g))
    }

    /// Chart at `x` adapted to the metric: face-tangent directions first,
    /// then one corrected edge direction per active constraint, each
    /// g-orthogonal to the face. The chart maps the model cone of depth ℓ
    /// onto the local corner exactly.
    pub fn standard_chart(
        &self,
        x: &DVector<f64>,
        g: &PreparedMetric,
        active_tol: f64,
    ) -> Result<AffineChart, DomainError> {
        let stratum = self.locate(x, active_tol)?;
        let face = self.face(&stratum)?;
        let ell = stratum.depth();
        let n = self.n;

        // Euclidean dual edges: E = Nᵀ(NNᵀ)⁻¹ so that n_j · e_k = δ_jk.
        let active = stratum.active();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
        for j in 0..n - ell {
            cols.push(face.basis.column(j).into_owned());
        }
        if ell > 0 {
            let mut nmat = DMatrix::zeros(ell, n);
            for (r, &k) in active.iter().enumerate() {
                nmat.set_row(r, &self.constraints[k].normal.transpose());
            }
            let gram = &nmat * nmat.transpose();
            let inv = gram
                .try_inverse()
                .ok_or_else(|| DomainError::ReentrantCorner {
                    point: x.iter().copied().collect(),
                })?;
            let edges = nmat.transpose() * inv;
            for j in 0..ell {
                let e = edges.column(j).into_owned();
                let corrected = &e - project_onto_basis(&face.basis, &e, g);
                cols.push(corrected);
            }
        }

        let j = columns_to_matrix(n, &cols);
        let j_inv = j.clone().try_inverse().ok_or_else(|| DomainError::ReentrantCorner {
            point: x.iter().copied().collect(),
        })?;
        Ok(AffineChart {
            base: x.clone(),
            j,
            j_inv,
            depth: ell,
        })
    }

    /// Deterministic seed grid on one face: `per_axis` samples per free
    /// dimension, kept strictly inside the face where possible.
    pub fn face_grid(&self, face: &Face, per_axis: usize) -> Vec<DVector<f64>> {
        match &self.shape {
            Shape::Product(factors) => {
                let mut axes: Vec<Vec<f64>> = Vec::new();
                for (i, f) in factors.iter().enumerate() {
                    let pinned = face.active.iter().find_map(|&k| {
                        let c = &self.constraints[k];
                        (c.normal[i] != 0.0).then(|| {
                            if c.normal[i] > 0.0 {
                                c.rhs
                            } else {
                                -c.rhs
                            }
                        })
                    });
                    axes.push(match (pinned, f) {
                        (Some(v), _) => vec![v],
                        (None, Factor::Interval { lo, hi }) => (0..per_axis)
                            .map(|k| lo + (k as f64 + 0.5) / per_axis as f64 * (hi - lo))
                            .collect(),
                        (None, Factor::Circle { period }) => (0..per_axis)
                            .map(|k| k as f64 / per_axis as f64 * period)
                            .collect(),
                    });
                }
                let mut out = Vec::new();
                let mut idx = vec![0usize; self.n];
                'outer: loop {
                    out.push(DVector::from_fn(self.n, |i, _| axes[i][idx[i]]));
                    for i in 0..self.n {
                        idx[i] += 1;
                        if idx[i] < axes[i].len() {
                            continue 'outer;
                        }
                        idx[i] = 0;
                    }
                    break;
                }
                out
            }
            Shape::Polytope => {
                let d = face.basis.ncols();
                if d == 0 {
                    return vec![face.anchor.clone()];
                }
                // bounding box of the face's vertices in basis coordinates
                let verts: Vec<&DVector<f64>> = self
                    .vertices
                    .iter()
                    .filter(|v| {
                        face.active
                            .iter()
                            .all(|&k| self.constraints[k].value(v).abs() <= 1e-9 * (1.0 + self.diameter))
                    })
                    .collect();
                if verts.is_empty() {
                    return Vec::new();
                }
                let coords: Vec<DVector<f64>> = verts
                    .iter()
                    .map(|v| face.basis.transpose() * (*v - &face.anchor))
                    .collect();
                let mut lo = coords[0].clone();
                let mut hi = coords[0].clone();
                for c in &coords[1..] {
                    for i in 0..d {
                        lo[i] = lo[i].min(c[i]);
                        hi[i] = hi[i].max(c[i]);
                    }
                }
                let margin = 1e-7 * (1.0 + self.diameter);
                let mut out = Vec::new();
                let mut idx = vec![0usize; d];
                'outer: loop {
                    let y = DVector::from_fn(d, |i, _| {
                        lo[i] + (idx[i] as f64 + 0.5) / per_axis as f64 * (hi[i] - lo[i])
                    });
                    let x = &face.anchor + &face.basis * y;
                    if self
                        .constraints
                        .iter()
                        .enumerate()
                        .all(|(k, c)| face.active.contains(&k) || c.value(&x) >= margin)
                    {
                        out.push(x);
                    }
                    for i in 0..d {
                        idx[i] += 1;
                        if idx[i] < per_axis {
                            continue 'outer;
                        }
                        idx[i] = 0;
                    }
                    break;
                }
                out
            }
        }
    }

    /// Uniform random point of the domain (rejection-sampled for polytopes).
    pub fn sample_point(&self, rng: &mut impl rand::Rng) -> DVector<f64> {
        match &self.shape {
            Shape::Product(factors) => DVector::from_fn(self.n, |i, _| match &factors[i] {
                Factor::Interval { lo, hi } => rng.gen_range(*lo..*hi),
                Factor::Circle { period } => rng.gen_range(0.0..*period),
            }),
            Shape::Polytope => {
                let (lo, hi) = self.bounding_box();
                loop {
                    let x = DVector::from_fn(self.n, |i, _| rng.gen_range(lo[i]..hi[i]));
                    if self.contains(&x, 0.0) {
                        return x;
                    }
                }
            }
        }
    }

    fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = self.vertices[0].clone();
        let mut hi = self.vertices[0].clone();
        for v in &self.vertices[1..] {
            for i in 0..self.n {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Distance from `x` to the hyperplane of each constraint not active at
    /// `x`; a lower bound on the distance to any non-adjacent face.
    pub fn clearance(&self, x: &DVector<f64>, stratum: &StratumId) -> f64 {
        let mut best = f64::INFINITY;
        for (k, c) in self.constraints.iter().enumerate() {
            if !stratum.contains(k) {
                best = best.min(c.value(x).abs() / c.normal.norm());
            }
        }
        best
    }

    /// Snap `x` exactly onto the hyperplane of constraint `k` along its
    /// normal.
    pub fn snap_to_constraint(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        let c = &self.constraints[k];
        let shift = -c.value(x) / c.normal.norm_squared();
        x + &c.normal * shift
    }

    /// Least-norm correction of `x` onto the affine hull of a face: zeroes
    /// the values of all the face's constraints at once.
    pub fn snap_to_face(&self, x: &DVector<f64>, stratum: &StratumId) -> DVector<f64> {
        let ell = stratum.depth();
        if ell == 0 {
            return x.clone();
        }
        let mut nmat = DMatrix::zeros(ell, self.n);
        let mut vals = DVector::zeros(ell);
        for (r, &k) in stratum.active().iter().enumerate() {
            nmat.set_row(r, &self.constraints[k].normal.transpose());
            vals[r] = self.constraints[k].value(x);
        }
        let gram = &nmat * nmat.transpose();
        match gram.cholesky() {
            Some(c) => x - nmat.transpose() * c.solve(&vals),
            None => x.clone(),
        }
    }
}

fn project_onto_basis(basis: &DMatrix<f64>, v: &DVector<f64>, g: &PreparedMetric) -> DVector<f64> {
    let d = basis.ncols();
    if d == 0 {
        return DVector::zeros(v.len());
    }
    let gb = if g.is_euclidean() {
        basis.clone()
    } else {
        let gm = g.matrix();
        &gm * basis
    };
    let gram = basis.transpose() * &gb;
    let rhs = gb.transpose() * v;
    let coeffs = gram
        .cholesky()
        .expect("face Gram matrix must be positive definite")
        .solve(&rhs);
    basis * coeffs
}

/// Affine chart `x = base + J·w` taking the model cone of depth `depth` onto
/// the local corner; face-tangent columns come first and are g-orthogonal to
/// the constrained columns.
#[derive(Debug, Clone)]
pub struct AffineChart {
    pub base: DVector<f64>,
    pub j: DMatrix<f64>,
    pub j_inv: DMatrix<f64>,
    pub depth: usize,
}

impl AffineChart {
    pub fn to_model(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.j_inv * (x - &self.base)
    }

    pub fn from_model(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.j * w
    }

    /// Coordinates of a tangent vector in the chart basis.
    pub fn pull_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.j_inv * v
    }
}

fn product_faces(
    factors: &[Factor],
    constraints: &[Constraint],
    n: usize,
) -> BTreeMap<Vec<usize>, Face> {
    // per-factor options: free, or pinned at one of its constraint ids
    let mut options: Vec<Vec<Option<usize>>> = Vec::new();
    for (i, f) in factors.iter().enumerate() {
        match f {
            Factor::Interval { .. } => {
                let base = constraints
                    .iter()
                    .position(|c| c.normal[i] != 0.0)
                    .unwrap();
                options.push(vec![None, Some(base), Some(base + 1)]);
            }
            Factor::Circle { .. } => options.push(vec![None]),
        }
    }

    let mut faces = BTreeMap::new();
    let mut idx = vec![0usize; factors.len()];
    'outer: loop {
        let mut active = Vec::new();
        for (i, &o) in idx.iter().enumerate() {
            if let Some(k) = options[i][o] {
                active.push(k);
            }
        }
        active.sort_unstable();

        let free_axes: Vec<usize> = (0..n)
            .filter(|&i| {
                !active
                    .iter()
                    .any(|&k| constraints[k].normal[i] != 0.0)
            })
            .collect();
        let basis_cols: Vec<DVector<f64>> = free_axes
            .iter()
            .map(|&i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
        let anchor = DVector::from_fn(n, |i, _| {
            if let Some(&k) = active
                .iter()
                .find(|&&k| constraints[k].normal[i] != 0.0)
            {
                let c = &constraints[k];
                if c.normal[i] > 0.0 {
                    c.rhs
                } else {
                    -c.rhs
                }
            } else {
                match &factors[i] {
                    Factor::Interval { lo, hi } => 0.5 * (lo + hi),
                    Factor::Circle { .. } => 0.0,
                }
            }
        });
        faces.insert(
            active.clone(),
            Face {
                active,
                basis: columns_to_matrix(n, &basis_cols),
                anchor,
            },
        );

        for i in 0..factors.len() {
            idx[i] += 1;
            if idx[i] < options[i].len() {
                continue 'outer;
            }
            idx[i] = 0;
        }
        break;
    }
    faces
}

fn product_vertices(factors: &[Factor], n: usize) -> Vec<DVector<f64>> {
    if factors
        .iter()
        .any(|f| matches!(f, Factor::Circle { .. }))
    {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    'outer: loop {
        out.push(DVector::from_fn(n, |i, _| match &factors[i] {
            Factor::Interval { lo, hi } => {
                if idx[i] == 0 {
                    *lo
                } else {
                    *hi
                }
            }
            Factor::Circle { .. } => unreachable!(),
        }));
        for i in 0..n {
            idx[i] += 1;
            if idx[i] < 2 {
                continue 'outer;
            }
            idx[i] = 0;
        }
        break;
    }
    out
}

fn check_bounded(a: &DMatrix<f64>, n: usize, m: usize) -> Result<(), DomainError> {
    let rows: Vec<DVector<f64>> = (0..m).map(|k| a.row(k).transpose()).collect();
    if rank_of(&rows) < n {
        return Err(DomainError::Unbounded);
    }
    // Any nontrivial recession direction lies along the null line of n-1
    // independent rows; enumerate those lines and test A·r ≤ 0.
    let mut subset = vec![0usize; n.saturating_sub(1)];
    enumerate_subsets(m, n - 1, &mut subset, 0, 0, &mut |chosen: &[usize]| {
        let sel: Vec<DVector<f64>> = chosen.iter().map(|&k| rows[k].clone()).collect();
        if rank_of(&sel) < n - 1 {
            return Ok(());
        }
        let null = complement_basis(&sel, n, |u, v| u.dot(v));
        if null.len() != 1 {
            return Ok(());
        }
        let r = &null[0];
        let tol = 1e-10;
        for dir in [r.clone(), -r] {
            if rows.iter().all(|row| row.dot(&dir) <= tol) {
                return Err(DomainError::Unbounded);
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn enumerate_subsets<E>(
    m: usize,
    size: usize,
    buf: &mut [usize],
    depth: usize,
    start: usize,
    f: &mut impl FnMut(&[usize]) -> Result<(), E>,
) -> Result<(), E> {
    if depth == size {
        return f(&buf[..size]);
    }
    for k in start..m {
        buf[depth] = k;
        enumerate_subsets(m, size, buf, depth + 1, k + 1, f)?;
    }
    Ok(())
}

fn polytope_vertices(
    constraints: &[Constraint],
    n: usize,
) -> Result<Vec<DVector<f64>>, DomainError> {
    let m = constraints.len();
    if m < n {
        return Err(DomainError::Unbounded);
    }
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    let mut buf = vec![0usize; n];
    enumerate_subsets(m, n, &mut buf, 0, 0, &mut |chosen: &[usize]| {
        let mut nmat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, &k) in chosen.iter().enumerate() {
            nmat.set_row(r, &constraints[k].normal.transpose());
            rhs[r] = constraints[k].rhs;
        }
        let lu = nmat.lu();
        if lu.determinant().abs() < 1e-12 {
            return Ok(());
        }
        let x = lu.solve(&rhs).unwrap();
        let feas_tol = 1e-9 * (1.0 + x.norm());
        if constraints.iter().any(|c| c.value(&x) < -feas_tol) {
            return Ok(());
        }
        let active_count = constraints
            .iter()
            .filter(|c| c.value(&x).abs() <= feas_tol)
            .count();
        if active_count != n {
            return Err(DomainError::NotSimple {
                location: x.iter().copied().collect(),
                count: active_count,
                dim: n,
            });
        }
        if !vertices.iter().any(|v| (v - &x).norm() < 1e-9 * (1.0 + x.norm())) {
            vertices.push(x);
        }
        Ok(())
    })?;
    Ok(vertices)
}

fn polytope_faces(constraints: &[Constraint], n: usize) -> BTreeMap<Vec<usize>, Face> {
    let m = constraints.len();
    let mut faces = BTreeMap::new();
    for size in 0..=n.min(m) {
        let mut buf = vec![0usize; size];
        let _ = enumerate_subsets::<()>(m, size, &mut buf, 0, 0, &mut |chosen: &[usize]| {
            let normals: Vec<DVector<f64>> =
                chosen.iter().map(|&k| constraints[k].normal.clone()).collect();
            if rank_of(&normals) < size {
                return Ok(());
            }
            let basis_cols = complement_basis(&normals, n, |u, v| u.dot(v));
            // anchor: least-squares point on the affine hull
            let anchor = if size == 0 {
                DVector::zeros(n)
            } else {
                let mut nmat = DMatrix::zeros(size, n);
                let mut rhs = DVector::zeros(size);
                for (r, &k) in chosen.iter().enumerate() {
                    nmat.set_row(r, &constraints[k].normal.transpose());
                    rhs[r] = constraints[k].rhs;
                }
                let gram = &nmat * nmat.transpose();
                let sol = gram
                    .cholesky()
                    .expect("independent normals give a definite Gram matrix")
                    .solve(&rhs);
                nmat.transpose() * sol
            };
            faces.insert(
                chosen.to_vec(),
                Face {
                    active: chosen.to_vec(),
                    basis: columns_to_matrix(n, &basis_cols),
                    anchor,
                },
            );
            Ok(())
        });
    }
    faces
}
