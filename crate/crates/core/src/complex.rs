//! The chain complex: connecting trajectories between index-adjacent rest
//! points, their orientation signs, integer boundary matrices, and the
//! homology they generate.
//!
//! Trajectories are found by shooting from a small sphere in each
//! generator's descending directions. Seeds are classified by the rest
//! point they converge to; runs of equal fate give direct connections, and
//! disagreeing neighbours are bisected to catch connections hiding on
//! basin boundaries. Each surviving trajectory is integrated once more to
//! the crossing level just above its target, where the transported
//! descending frame, the flow direction, and the target's stable-side
//! frame are compared against the ambient orientation to produce a sign.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::One;
use rand::Rng;
use rand::SeedableRng;

use crate::critical::{CriticalSet, MorseViolation, ViolationKind};
use crate::domain::{Domain, Factor, StratumId};
use crate::field::{modified_gradient, projected_descent, FieldError, ScalarField, Tolerances};
use crate::flow::{EventKind, FlowOutcome, FlowSettings, Integrator};
use crate::snf::smith_normal_form;

#[derive(Debug, Clone)]
pub struct ComplexOptions {
    /// Sphere sample count for sources with two or more descending
    /// directions (one descending direction always uses both endpoints).
    pub samples: usize,
    /// Sphere radius; derived from generator spacing when absent.
    pub epsilon: Option<f64>,
    /// Seed for the sphere sampler in four or more descending directions.
    pub seed: u64,
    pub flow: FlowSettings,
}

impl Default for ComplexOptions {
    fn default() -> ComplexOptions {
        ComplexOptions {
            samples: 64,
            epsilon: None,
            seed: 0,
            flow: FlowSettings::default(),
        }
    }
}

/// Orientation data cached at the crossing point, sufficient to replay the
/// sign under any choice of frame orientations without re-integrating.
#[derive(Debug, Clone)]
pub struct CrossingFrames {
    /// Flow direction in the transported descending frame.
    pub gamma: DVector<f64>,
    /// Flow direction in the target's stable-side frame.
    pub delta: DVector<f64>,
    /// Sign of the joint determinant with both pivot columns removed.
    pub det_sign: i32,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Generator ids.
    pub source: usize,
    pub target: usize,
    pub sign: i32,
    /// Start point on the descending sphere.
    pub seed: DVector<f64>,
    /// Where the trajectory crosses the level just above its target.
    pub crossing: DVector<f64>,
    pub crossing_time: f64,
    pub frames: CrossingFrames,
}

#[derive(Debug, Clone)]
pub struct MorseComplex {
    pub trajectories: Vec<Trajectory>,
    /// `boundaries[k-1]` maps index-k generators to index-(k-1) ones;
    /// rows and columns follow generator id order within each index.
    pub boundaries: Vec<DMatrix<i64>>,
    pub violations: Vec<MorseViolation>,
    /// Seeds whose fate could not be resolved within budget.
    pub unresolved: usize,
    pub epsilon: f64,
    pub samples: usize,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Homology {
    pub betti: Vec<usize>,
    /// Torsion coefficients per degree.
    pub torsion: Vec<Vec<BigInt>>,
}

/// The sign recipe. The transported descending frame `V` must present the
/// flow direction last, the stable frame must present it first; extracting
/// the largest coefficient from each expansion and reordering contributes
/// the two parity factors, and the remaining columns join the flow
/// direction in one ambient determinant.
pub fn oriented_sign(frames: &CrossingFrames, flip_source: bool, flip_target: bool) -> i32 {
    let mut gamma = frames.gamma.clone();
    let mut delta = frames.delta.clone();
    let mut det = frames.det_sign;
    if flip_source && !gamma.is_empty() {
        gamma[0] = -gamma[0];
    }
    if flip_target && !delta.is_empty() {
        let last = delta.len() - 1;
        delta[last] = -delta[last];
    }
    let k = argmax_abs(&gamma);
    let j = argmax_abs(&delta);
    // Removed pivot columns never enter the determinant; every other
    // flipped column does.
    if flip_source && k != 0 {
        det = -det;
    }
    if flip_target && j + 1 != delta.len() {
        det = -det;
    }
    let s1 = sign_of(gamma[k]) * parity(gamma.len() - 1 - k);
    let s2 = sign_of(delta[j]) * parity(j);
    s1 * s2 * det
}

fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn sign_of(x: f64) -> i32 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

fn parity(p: usize) -> i32 {
    if p % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Enumerate connecting trajectories between index-adjacent generators and
/// assemble the integer boundary matrices.
pub fn build_complex(
    domain: &Domain,
    field: &ScalarField,
    tol: &Tolerances,
    critical: &CriticalSet,
    opts: &ComplexOptions,
) -> Result<MorseComplex, FieldError> {
    let n = domain.dim();
    let gens: Vec<&crate::critical::CriticalPoint> = critical
        .generators
        .iter()
        .map(|&i| &critical.points[i])
        .collect();

    let spacing = min_spacing(domain, &gens);
    let gap = min_value_gap(&gens, tol);
    let epsilon = resolve_epsilon(domain, &gens, opts, spacing, gap, tol);
    let r_match = 0.45 * spacing;
    let r_cap = 1e-4 * domain.diameter().max(1.0);

    let integrator = Integrator {
        domain,
        field,
        tol: *tol,
        settings: opts.flow.clone(),
    };

    let mut enumerator = Enumerator {
        domain,
        field,
        tol,
        integrator,
        gens: &gens,
        epsilon,
        r_match,
        r_cap,
        violations: Vec::new(),
        unresolved: 0,
        trajectories: Vec::new(),
    };

    for source in 0..gens.len() {
        if gens[source].index >= 1 {
            enumerator.enumerate_source(source, opts)?;
        }
    }

    let Enumerator {
        violations,
        unresolved,
        trajectories,
        ..
    } = enumerator;

    let boundaries = assemble(&trajectories, critical, n, |t| t.sign);

    Ok(MorseComplex {
        trajectories,
        boundaries,
        violations,
        unresolved,
        epsilon,
        samples: opts.samples,
        dim: n,
    })
}

impl MorseComplex {
    /// Sum of trajectory signs from one generator to another.
    pub fn degree(&self, source: usize, target: usize) -> i64 {
        self.trajectories
            .iter()
            .filter(|t| t.source == source && t.target == target)
            .map(|t| t.sign as i64)
            .sum()
    }

    pub fn fatal(&self) -> bool {
        self.violations.iter().any(|v| v.fatal)
    }

    /// Boundary matrices recomputed under per-generator orientation flips,
    /// replayed from the cached crossing frames.
    pub fn boundaries_with_flips(
        &self,
        critical: &CriticalSet,
        flips: &[bool],
    ) -> Vec<DMatrix<i64>> {
        assemble(&self.trajectories, critical, self.dim, |t| {
            oriented_sign(&t.frames, flips[t.source], flips[t.target])
        })
    }
}

/// `boundary(k) . boundary(k+1) = 0` in exact integers.
pub fn verify_chain(boundaries: &[DMatrix<i64>]) -> bool {
    boundaries.windows(2).all(|w| {
        let prod = &w[0] * &w[1];
        prod.iter().all(|&x| x == 0)
    })
}

/// Betti numbers and torsion from the boundary matrices.
pub fn homology(critical: &CriticalSet, boundaries: &[DMatrix<i64>], n: usize) -> Homology {
    let counts = critical.counts(n);
    let snfs: Vec<_> = boundaries
        .iter()
        .map(|b| smith_normal_form(&to_rows(b)))
        .collect();
    let rank = |k: usize| -> usize {
        if k >= 1 && k <= n {
            snfs[k - 1].rank
        } else {
            0
        }
    };
    let betti = (0..=n).map(|k| counts[k] - rank(k) - rank(k + 1)).collect();
    let torsion = (0..=n)
        .map(|k| {
            if k + 1 <= n {
                snfs[k]
                    .invariant_factors
                    .iter()
                    .filter(|f| **f > BigInt::one())
                    .cloned()
                    .collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    Homology { betti, torsion }
}

/// Independent right-hand side for the homology comparison: Betti numbers
/// of the domain itself, from the product structure.
pub fn expected_homology(domain: &Domain) -> Vec<usize> {
    let n = domain.dim();
    match domain.factors() {
        Some(factors) => {
            let mut acc = vec![1usize];
            for f in factors {
                let poly: &[usize] = match f {
                    Factor::Interval { .. } => &[1],
                    Factor::Circle { .. } => &[1, 1],
                };
                acc = convolve(&acc, poly);
            }
            acc.resize(n + 1, 0);
            acc
        }
        // A bounded simple polytope is convex, hence contractible.
        None => {
            let mut b = vec![0usize; n + 1];
            b[0] = 1;
            b
        }
    }
}

fn convolve(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Generator counts dominate Betti numbers and match their Euler sum.
pub fn morse_inequalities(counts: &[usize], betti: &[usize]) -> bool {
    if counts.len() != betti.len() {
        return false;
    }
    let weak = counts.iter().zip(betti).all(|(c, b)| c >= b);
    let euler = |v: &[usize]| -> i64 {
        v.iter()
            .enumerate()
            .map(|(k, &x)| if k % 2 == 0 { x as i64 } else { -(x as i64) })
            .sum()
    };
    weak && euler(counts) == euler(betti)
}

fn to_rows(m: &DMatrix<i64>) -> Vec<Vec<i64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn assemble(
    trajectories: &[Trajectory],
    critical: &CriticalSet,
    n: usize,
    sign: impl Fn(&Trajectory) -> i32,
) -> Vec<DMatrix<i64>> {
    // Rows/columns within a matrix follow generator id order.
    let by_index: Vec<Vec<usize>> = (0..=n)
        .map(|k| {
            (0..critical.generators.len())
                .filter(|&id| critical.generator(id).index == k)
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for k in 1..=n {
        let rows = &by_index[k - 1];
        let cols = &by_index[k];
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for t in trajectories {
            let (Some(i), Some(j)) = (
                rows.iter().position(|&id| id == t.target),
                cols.iter().position(|&id| id == t.source),
            ) else {
                continue;
            };
            m[(i, j)] += sign(t) as i64;
        }
        out.push(m);
    }
    out
}

fn min_spacing(domain: &Domain, gens: &[&crate::critical::CriticalPoint]) -> f64 {
    let mut best = domain.diameter().max(1.0);
    for i in 0..gens.len() {
        for j in i + 1..gens.len() {
            best = best.min(domain.distance(&gens[i].x, &gens[j].x));
        }
    }
    best
}

fn min_value_gap(gens: &[&crate::critical::CriticalPoint], tol: &Tolerances) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..gens.len() {
        for j in i + 1..gens.len() {
            let g = (gens[i].value - gens[j].value).abs();
            if g > tol.level {
                best = best.min(g);
            }
        }
    }
    best
}

/// Sphere radius: a small fraction of the generator spacing, kept below a
/// quarter of the smallest value gap so crossing levels stay ordered, then
/// halved until every seed stays on its source's stratum.
fn resolve_epsilon(
    domain: &Domain,
    gens: &[&crate::critical::CriticalPoint],
    opts: &ComplexOptions,
    spacing: f64,
    gap: f64,
    tol: &Tolerances,
) -> f64 {
    if let Some(e) = opts.epsilon {
        return e;
    }
    let mut epsilon = 1e-2 * spacing;
    if gap.is_finite() {
        epsilon = epsilon.min(0.25 * gap);
    }
    'shrink: for _ in 0..60 {
        for p in gens.iter().filter(|p| p.index >= 1) {
            for dir in sphere_directions(p.index, opts) {
                let seed = domain.canonicalize(&(&p.x + &p.e_minus * dir * epsilon));
                match domain.locate(&seed, tol.active) {
                    Ok(s) if s == p.stratum => {}
                    _ => {
                        epsilon *= 0.5;
                        continue 'shrink;
                    }
                }
            }
        }
        break;
    }
    epsilon
}

/// Unit directions on the descending sphere. One dimension uses both
/// endpoints, two dimensions a uniform angle grid, three a Fibonacci
/// lattice, and anything higher a seeded Gaussian sample.
///
/// Trigonometric components are snapped to exact zero below rounding
/// noise: a seed meant to lie on an invariant axis must not carry an
/// off-axis perturbation, however small, because the flow magnifies it
/// exponentially while passing a saddle.
fn sphere_directions(lambda: usize, opts: &ComplexOptions) -> Vec<DVector<f64>> {
    let m = opts.samples.max(4);
    let snap = |v: DVector<f64>| v.map(|x| if x.abs() < 1e-12 { 0.0 } else { x });
    match lambda {
        0 => Vec::new(),
        1 => vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        2 => (0..m)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / m as f64;
                snap(DVector::from_vec(vec![a.cos(), a.sin()]))
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..m)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let a = golden * k as f64;
                    snap(DVector::from_vec(vec![r * a.cos(), r * a.sin(), z]))
                })
                .collect()
        }
        _ => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
            (0..m)
                .map(|_| {
                    loop {
                        let v = DVector::from_fn(lambda, |_, _| {
                            // Box-Muller from two uniform draws.
                            let u1: f64 = rng.gen_range(1e-12..1.0);
                            let u2: f64 = rng.gen_range(0.0..1.0);
                            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                        });
                        let norm = v.norm();
                        if norm > 1e-6 {
                            return v / norm;
                        }
                    }
                })
                .collect()
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Fate {
    Generator(usize),
    Unresolved,
}

struct Enumerator<'a> {
    domain: &'a Domain,
    field: &'a ScalarField,
    tol: &'a Tolerances,
    integrator: Integrator<'a>,
    gens: &'a [&'a crate::critical::CriticalPoint],
    epsilon: f64,
    r_match: f64,
    r_cap: f64,
    violations: Vec<MorseViolation>,
    unresolved: usize,
    trajectories: Vec<Trajectory>,
}

impl<'a> Enumerator<'a> {
    fn enumerate_source(&mut self, source: usize, opts: &ComplexOptions) -> Result<(), FieldError> {
        let p = self.gens[source];
        let dirs = sphere_directions(p.index, opts);
        let fates: Vec<Fate> = dirs
            .iter()
            .map(|d| self.seed_fate(source, d))
            .collect::<Result<_, _>>()?;

        let mut candidates: Vec<(usize, DVector<f64>)> = Vec::new();

        if p.index == 1 || p.index >= 3 {
            for (dir, fate) in dirs.iter().zip(&fates) {
                if let Fate::Generator(t) = fate {
                    if self.gens[*t].index + 1 == p.index {
                        candidates.push((*t, dir.clone()));
                    }
                }
            }
        } else {
            // Two descending directions: the circle of seeds has a cyclic
            // adjacency worth exploiting.
            candidates.extend(self.circle_clusters(source, &fates, &dirs));
            candidates.extend(self.bisect_boundaries(source, &fates, opts)?);
        }

        let mut kept: Vec<Trajectory> = Vec::new();
        for (target, dir) in candidates {
            let Some(t) = self.realize(source, target, &dir)? else {
                continue;
            };
            if kept
                .iter()
                .filter(|k| k.target == target)
                .all(|k| self.domain.distance(&k.crossing, &t.crossing) > self.r_cap)
            {
                kept.push(t);
            }
        }
        self.trajectories.append(&mut kept);
        Ok(())
    }

    fn seed_point(&self, source: usize, dir: &DVector<f64>) -> DVector<f64> {
        let p = self.gens[source];
        self.domain
            .canonicalize(&(&p.x + &p.e_minus * dir * self.epsilon))
    }

    /// Flow one seed to rest and name the generator it reached.
    fn seed_fate(&mut self, source: usize, dir: &DVector<f64>) -> Result<Fate, FieldError> {
        let x0 = self.seed_point(source, dir);
        let path = match self.integrator.flow(&x0) {
            Ok(p) => p,
            Err(crate::flow::FlowError::Field(e)) => return Err(e),
            Err(_) => {
                self.unresolved += 1;
                return Ok(Fate::Unresolved);
            }
        };
        self.check_releases(&path)?;
        if path.outcome != FlowOutcome::Stationary {
            self.unresolved += 1;
            return Ok(Fate::Unresolved);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in self.gens.iter().enumerate() {
            let d = self.domain.distance(&path.end, &g.x);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, d)) if d < self.r_match => Ok(Fate::Generator(i)),
            _ => {
                self.unresolved += 1;
                Ok(Fate::Unresolved)
            }
        }
    }

    /// Transversality of every constraint release along a path: the
    /// multiplier must cross zero at a nonzero rate, otherwise the flow
    /// map is not differentiable there.
    fn check_releases(&mut self, path: &crate::flow::FlowPath) -> Result<(), FieldError> {
        for e in &path.events {
            let EventKind::Release(k) = e.kind.clone() else {
                continue;
            };
            let Ok(stratum) = self.domain.locate(&e.x, self.tol.active) else {
                continue;
            };
            if !stratum.contains(k) {
                continue;
            }
            let smaller = StratumId::new(
                stratum
                    .active()
                    .iter()
                    .copied()
                    .filter(|&c| c != k)
                    .collect(),
            );
            let v = projected_descent(self.domain, self.field, &smaller, &e.x)?;
            let (_, _, h) = self.field.hessian(&e.x)?;
            let hv = self.field.metric().raise(&(&h * &v));
            let rate = -self.domain.constraints()[k]
                .normal
                .dot(&self.domain.face_projection(&smaller, &hv, self.field.metric())?);
            let scale = self.domain.constraints()[k].normal.norm()
                * (1.0 + self.field.metric().norm(&hv));
            if rate.abs() < self.tol.stationary * scale {
                let duplicate = self.violations.iter().any(|w| {
                    w.kind == ViolationKind::TangentialRelease { constraint: k }
                        && self.domain.distance(&w.x, &e.x) < self.tol.crit
                });
                if !duplicate {
                    self.violations.push(MorseViolation {
                        x: e.x.clone(),
                        stratum: stratum.clone(),
                        kind: ViolationKind::TangentialRelease { constraint: k },
                        fatal: true,
                        detail: format!(
                            "constraint {k} released tangentially (rate {rate:.3e})"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Cyclic runs of seeds sharing an index-adjacent fate. A run of three
    /// or more means the connections are not isolated.
    fn circle_clusters(
        &mut self,
        source: usize,
        fates: &[Fate],
        dirs: &[DVector<f64>],
    ) -> Vec<(usize, DVector<f64>)> {
        let m = fates.len();
        let p = self.gens[source];
        let mut out = Vec::new();
        let mut visited = vec![false; m];
        for start in 0..m {
            if visited[start] {
                continue;
            }
            let Fate::Generator(t) = fates[start] else {
                continue;
            };
            if self.gens[t].index + 1 != p.index {
                continue;
            }
            // Walk the full cyclic run through `start`.
            let mut lo = start;
            while fates[(lo + m - 1) % m] == fates[start] && (lo + m - 1) % m != start {
                lo = (lo + m - 1) % m;
            }
            let mut len = 1;
            while fates[(lo + len) % m] == fates[start] && len < m {
                len += 1;
            }
            for i in 0..len {
                visited[(lo + i) % m] = true;
            }
            if len >= 3 {
                self.violations.push(MorseViolation {
                    x: p.x.clone(),
                    stratum: p.stratum.clone(),
                    kind: ViolationKind::NonIsolatedConnections { source, target: t },
                    fatal: true,
                    detail: format!(
                        "{len} adjacent seeds from generator {source} all reach generator {t}"
                    ),
                });
            }
            out.push((t, dirs[(lo + len / 2) % m].clone()));
        }
        out
    }

    /// Bisect between neighbouring seeds of differing fate, looking for an
    /// index-adjacent generator separating the two basins. Pairs where one
    /// side already rests on such a generator are its basin edge and carry
    /// nothing new.
    fn bisect_boundaries(
        &mut self,
        source: usize,
        fates: &[Fate],
        opts: &ComplexOptions,
    ) -> Result<Vec<(usize, DVector<f64>)>, FieldError> {
        let gens = self.gens;
        let src_index = gens[source].index;
        let m = fates.len();
        let mut out = Vec::new();
        let adjacent = move |f: &Fate| match f {
            Fate::Generator(t) => gens[*t].index + 1 == src_index,
            Fate::Unresolved => false,
        };
        for k in 0..m {
            let a = &fates[k];
            let b = &fates[(k + 1) % m];
            if a == b || adjacent(a) || adjacent(b) {
                continue;
            }
            let step = std::f64::consts::TAU / opts.samples.max(4) as f64;
            let mut lo = step * k as f64;
            let mut hi = lo + step;
            let fate_lo = *a;
            for _ in 0..60 {
                if hi - lo < 1e-9 * step {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let dir = DVector::from_vec(vec![mid.cos(), mid.sin()]);
                let fate = self.seed_fate(source, &dir)?;
                if adjacent(&fate) {
                    let Fate::Generator(t) = fate else { unreachable!() };
                    out.push((t, dir));
                    break;
                }
                if fate == fate_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        Ok(out)
    }

    /// Integrate the representative to its crossing level and compare
    /// frames. None when the candidate fails to confirm its target.
    fn realize(
        &mut self,
        source: usize,
        target: usize,
        dir: &DVector<f64>,
    ) -> Result<Option<Trajectory>, FieldError> {
        let p = self.gens[source];
        let q_gen = self.gens[target];
        let x0 = self.seed_point(source, dir);
        let level = q_gen.value + self.epsilon;

        let path = match self.integrator.flow_to_level(&x0, level) {
            Ok(p) => p,
            Err(crate::flow::FlowError::Field(e)) => return Err(e),
            Err(_) => {
                self.unresolved += 1;
                return Ok(None);
            }
        };
        if path.outcome != FlowOutcome::LevelReached {
            self.unresolved += 1;
            return Ok(None);
        }
        let crossing = path.end.clone();

        // The tail from the crossing must still rest on the target.
        match self.integrator.flow(&crossing) {
            Ok(tail)
                if tail.outcome == FlowOutcome::Stationary
                    && self.domain.distance(&tail.end, &q_gen.x) < self.r_match => {}
            _ => return Ok(None),
        }

        let dirs: Vec<DVector<f64>> = (0..p.e_minus.ncols())
            .map(|j| p.e_minus.column(j).into_owned())
            .collect();
        let jac = match self
            .integrator
            .flow_jacobian(&x0, path.end_t, &dirs, 1e-3 * self.epsilon)
        {
            Ok(j) => j,
            Err(_) => {
                self.violations.push(MorseViolation {
                    x: crossing.clone(),
                    stratum: p.stratum.clone(),
                    kind: ViolationKind::DegenerateCrossingFrame { source, target },
                    fatal: true,
                    detail: format!(
                        "flow map not differentiable along the {source}->{target} trajectory"
                    ),
                });
                return Ok(None);
            }
        };

        let here = self.domain.locate(&crossing, self.tol.active)?;
        let w = modified_gradient(self.domain, self.field, &crossing, &here, self.tol)?.vector;

        let gamma = least_squares(&jac, &w);
        let delta = least_squares(&q_gen.e_plus, &w);
        let gamma_res = (&jac * &gamma - &w).norm();
        let delta_res = (&q_gen.e_plus * &delta - &w).norm();
        if gamma_res > 0.5 * w.norm() || delta_res > 0.5 * w.norm() {
            self.violations.push(MorseViolation {
                x: crossing.clone(),
                stratum: here,
                kind: ViolationKind::DegenerateCrossingFrame { source, target },
                fatal: true,
                detail: format!(
                    "flow direction escapes the crossing frames \
                     (residuals {gamma_res:.2e}/{delta_res:.2e})"
                ),
            });
            return Ok(None);
        }

        let k = argmax_abs(&gamma);
        let j = argmax_abs(&delta);
        let n = self.domain.dim();
        let mut joint = DMatrix::zeros(n, n);
        let mut col = 0;
        for c in 0..jac.ncols() {
            if c != k {
                joint.set_column(col, &jac.column(c).normalize());
                col += 1;
            }
        }
        joint.set_column(col, &w.normalize());
        col += 1;
        for c in 0..q_gen.e_plus.ncols() {
            if c != j {
                joint.set_column(col, &q_gen.e_plus.column(c).normalize());
                col += 1;
            }
        }
        debug_assert_eq!(col, n);
        let det = joint.determinant();
        if det.abs() < 1e-6 {
            self.violations.push(MorseViolation {
                x: crossing.clone(),
                stratum: here,
                kind: ViolationKind::DegenerateCrossingFrame { source, target },
                fatal: true,
                detail: format!("joint crossing frame is singular (det {det:.2e})"),
            });
            return Ok(None);
        }

        let frames = CrossingFrames {
            gamma,
            delta,
            det_sign: sign_of(det),
        };
        let sign = oriented_sign(&frames, false, false);
        Ok(Some(Trajectory {
            source,
            target,
            sign,
            seed: x0,
            crossing,
            crossing_time: path.end_t,
            frames,
        }))
    }
}

/// Solve `m c = w` in the least-squares sense.
fn least_squares(m: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    m.clone()
        .svd(true, true)
        .solve(w, 1e-12 * scale)
        .expect("SVD solve on a finite matrix")
}
