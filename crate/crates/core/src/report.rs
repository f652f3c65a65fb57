//! Machine-readable run reports and the CSV trajectory dump.
//!
//! Reports are deterministic for a fixed configuration and seed: every
//! list follows the canonical ordering (critical points by value, then
//! lexicographic location) and field order is fixed by declaration. The
//! `timing` block is the one intentionally non-reproducible section.

use serde::Serialize;
use std::io::Write;

use crate::complex::{expected_homology, homology, verify_chain, MorseComplex};
use crate::critical::{CriticalSet, MorseViolation, ViolationKind};
use crate::flow::Integrator;
use crate::problem::{Problem, ResolvedConfig};

#[derive(Debug, Serialize)]
pub struct Report {
    pub version: &'static str,
    pub config: ResolvedConfig,
    pub morse_validation: Vec<ValidationEntry>,
    pub critical_points: Vec<CriticalRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complex: Option<ComplexSection>,
    pub timing: Timing,
}

#[derive(Debug, Serialize)]
pub struct ValidationEntry {
    pub condition: String,
    pub location: Vec<f64>,
    pub stratum: Vec<usize>,
    pub detail: String,
    pub fatal: bool,
}

#[derive(Debug, Serialize)]
pub struct CriticalRow {
    pub id: usize,
    pub location: Vec<f64>,
    pub stratum_depth: usize,
    pub essential: bool,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct ComplexSection {
    /// Table ids of the complex generators, grouped by Morse index.
    pub generators: Vec<Vec<usize>>,
    pub boundary_matrices: Vec<Vec<Vec<i64>>>,
    pub chain_check: bool,
    pub betti: Vec<usize>,
    pub torsion: Vec<Vec<String>>,
    pub oracle_betti: Vec<usize>,
    pub r#match: bool,
    pub epsilon: f64,
    pub samples: usize,
}

#[derive(Debug, Default, Serialize)]
pub struct Timing {
    pub critical_ms: f64,
    pub complex_ms: f64,
    pub total_ms: f64,
}

impl Report {
    pub fn new(config: ResolvedConfig) -> Report {
        Report {
            version: env!("CARGO_PKG_VERSION"),
            config,
            morse_validation: Vec::new(),
            critical_points: Vec::new(),
            complex: None,
            timing: Timing::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

pub fn violation_entry(v: &MorseViolation) -> ValidationEntry {
    let condition = match &v.kind {
        ViolationKind::DegenerateRestPoint => "degenerate_rest_point",
        ViolationKind::DegenerateRestriction { .. } => "degenerate_restriction",
        ViolationKind::VanishingSubsetProjection { .. } => "vanishing_subset_projection",
        ViolationKind::TangentialRelease { .. } => "tangential_release",
        ViolationKind::NonIsolatedConnections { .. } => "non_isolated_connections",
        ViolationKind::DegenerateCrossingFrame { .. } => "degenerate_crossing_frame",
    };
    ValidationEntry {
        condition: condition.to_string(),
        location: v.x.iter().copied().collect(),
        stratum: v.stratum.active().to_vec(),
        detail: v.detail.clone(),
        fatal: v.fatal,
    }
}

pub fn critical_table(critical: &CriticalSet) -> Vec<CriticalRow> {
    critical
        .points
        .iter()
        .enumerate()
        .map(|(id, p)| CriticalRow {
            id,
            location: p.x.iter().copied().collect(),
            stratum_depth: p.stratum.depth(),
            essential: p.essential,
            index: p.index,
            value: p.value,
        })
        .collect()
}

/// Assemble the chain-complex section, including the homology comparison
/// against the domain oracle.
pub fn complex_section(
    problem: &Problem,
    critical: &CriticalSet,
    complex: &MorseComplex,
) -> ComplexSection {
    let n = problem.domain.dim();
    let generators = (0..=n)
        .map(|k| {
            critical
                .generators
                .iter()
                .copied()
                .filter(|&i| critical.points[i].index == k)
                .collect()
        })
        .collect();
    let boundary_matrices = complex
        .boundaries
        .iter()
        .map(|m| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        })
        .collect();
    let chain_check = verify_chain(&complex.boundaries);
    let h = homology(critical, &complex.boundaries, n);
    let oracle_betti = expected_homology(&problem.domain);
    let matches = chain_check && h.betti == oracle_betti && h.torsion.iter().all(|t| t.is_empty());
    ComplexSection {
        generators,
        boundary_matrices,
        chain_check,
        betti: h.betti,
        torsion: h
            .torsion
            .iter()
            .map(|fs| fs.iter().map(|f| f.to_string()).collect())
            .collect(),
        oracle_betti,
        r#match: matches,
        epsilon: complex.epsilon,
        samples: complex.samples,
    }
}

/// One line per integration step of every connecting trajectory, replayed
/// with tracing on.
pub fn write_trace_csv(
    out: &mut dyn Write,
    problem: &Problem,
    complex: &MorseComplex,
) -> std::io::Result<()> {
    let n = problem.domain.dim();
    write!(out, "trajectory_id,t")?;
    for i in 1..=n {
        write!(out, ",x{i}")?;
    }
    writeln!(out, ",stratum_depth,event")?;

    let mut settings = problem.flow.clone();
    settings.record_trace = true;
    let integrator = Integrator {
        domain: &problem.domain,
        field: &problem.field,
        tol: problem.tolerances,
        settings,
    };
    for (id, trajectory) in complex.trajectories.iter().enumerate() {
        let Ok(path) = integrator.flow(&trajectory.seed) else {
            continue;
        };
        for point in &path.trace {
            write!(out, "{id},{}", point.t)?;
            for c in point.x.iter() {
                write!(out, ",{c}")?;
            }
            writeln!(
                out,
                ",{},{}",
                point.depth,
                point.event.as_deref().unwrap_or("")
            )?;
        }
    }
    Ok(())
}
