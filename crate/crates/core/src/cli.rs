//! Command-line front end: load a problem, run the requested pipeline
//! stages, and emit the report.
//!
//! Exit codes: 0 success (and oracle match where applicable), 2 for
//! configuration or validation failures, 3 for numeric failures during
//! enumeration (lost transversality, exhausted budgets), 4 when the
//! computed homology disagrees with the domain oracle.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::complex::build_complex;
use crate::critical::find_critical_points;
use crate::problem::{load_problem, Overrides};
use crate::report::{self, Report, ValidationEntry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Parser)]
#[command(
    name = "morse-corners",
    version,
    about = "Morse chain complexes and homology on manifolds with corners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Morse hypotheses and report violations.
    Validate(RunArgs),
    /// List stratum-critical points with indices and classifications.
    Critical(RunArgs),
    /// Build the chain complex and boundary matrices.
    Complex(RunArgs),
    /// Full pipeline with homology and the oracle comparison.
    Homology(RunArgs),
    /// Full pipeline plus a CSV dump of every connecting trajectory.
    Trace(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV destination for the trace command.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Seed for randomized sphere sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sphere sample count; overrides the configuration.
    #[arg(long)]
    samples: Option<usize>,
    /// Sphere radius; overrides the configuration.
    #[arg(long)]
    epsilon: Option<f64>,
}

/// Run the CLI and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::Validate(a) => (Stage::Validate, a),
        Command::Critical(a) => (Stage::Validate, a),
        Command::Complex(a) => (Stage::Complex, a),
        Command::Homology(a) => (Stage::Homology, a),
        Command::Trace(a) => (Stage::Trace, a),
    };
    match execute(stage, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Validate,
    Complex,
    Homology,
    Trace,
}

fn execute(stage: Stage, args: &RunArgs) -> Result<i32, std::io::Error> {
    let started = Instant::now();
    let overrides = Overrides {
        seed: args.seed,
        samples: args.samples,
        epsilon: args.epsilon,
    };

    let problem = match load_problem(&args.config.to_string_lossy(), &overrides) {
        Ok(p) => p,
        Err(e) => {
            // Configuration failures still produce a machine-readable
            // artifact so callers always have something to parse.
            let body = serde_json::json!({ "error": e.to_string() });
            emit(args, &format!("{body:#}\n"))?;
            eprintln!("error: {e}");
            return Ok(EXIT_VALIDATION);
        }
    };

    let mut report = Report::new(problem.resolved.clone());

    let critical_started = Instant::now();
    let critical = match find_critical_points(&problem.domain, &problem.field, &problem.tolerances)
    {
        Ok(c) => c,
        Err(e) => {
            let body = serde_json::json!({ "error": e.to_string() });
            emit(args, &format!("{body:#}\n"))?;
            eprintln!("error: {e}");
            return Ok(EXIT_VALIDATION);
        }
    };
    report.timing.critical_ms = critical_started.elapsed().as_secs_f64() * 1e3;

    report.morse_validation = critical.violations.iter().map(report::violation_entry).collect();
    report.critical_points = report::critical_table(&critical);

    let validation_failed = critical.fatal();
    if stage == Stage::Validate || validation_failed {
        report.timing.total_ms = started.elapsed().as_secs_f64() * 1e3;
        emit(args, &report.to_json())?;
        return Ok(if validation_failed {
            EXIT_VALIDATION
        } else {
            EXIT_OK
        });
    }

    let complex_started = Instant::now();
    let complex = match build_complex(
        &problem.domain,
        &problem.field,
        &problem.tolerances,
        &critical,
        &problem.options,
    ) {
        Ok(c) => c,
        Err(e) => {
            report.morse_validation.push(ValidationEntry {
                condition: "enumeration_failure".to_string(),
                location: Vec::new(),
                stratum: Vec::new(),
                detail: e.to_string(),
                fatal: true,
            });
            report.timing.total_ms = started.elapsed().as_secs_f64() * 1e3;
            emit(args, &report.to_json())?;
            eprintln!("error: {e}");
            return Ok(EXIT_NUMERIC);
        }
    };
    report.timing.complex_ms = complex_started.elapsed().as_secs_f64() * 1e3;

    report
        .morse_validation
        .extend(complex.violations.iter().map(report::violation_entry));
    if complex.unresolved > 0 {
        report.morse_validation.push(ValidationEntry {
            condition: "unresolved_seeds".to_string(),
            location: Vec::new(),
            stratum: Vec::new(),
            detail: format!(
                "{} seeds did not resolve to a rest point within budget",
                complex.unresolved
            ),
            fatal: true,
        });
    }

    report.complex = Some(report::complex_section(&problem, &critical, &complex));

    let numeric_failed = complex.fatal() || complex.unresolved > 0;
    let oracle_matched = report.complex.as_ref().is_some_and(|c| c.r#match);

    if stage >= Stage::Trace {
        if let Some(path) = &args.trace {
            let mut file = std::fs::File::create(path)?;
            report::write_trace_csv(&mut file, &problem, &complex)?;
        } else {
            let mut buf = Vec::new();
            report::write_trace_csv(&mut buf, &problem, &complex)?;
            std::io::stderr().write_all(&buf)?;
        }
    }

    report.timing.total_ms = started.elapsed().as_secs_f64() * 1e3;
    emit(args, &report.to_json())?;

    if numeric_failed {
        return Ok(EXIT_NUMERIC);
    }
    if stage >= Stage::Homology && !oracle_matched {
        return Ok(EXIT_ORACLE);
    }
    Ok(EXIT_OK)
}

fn emit(args: &RunArgs, body: &str) -> Result<(), std::io::Error> {
    match &args.output {
        Some(path) => std::fs::write(path, body),
        None => std::io::stdout().write_all(body.as_bytes()),
    }
}
