//! Problem configuration: the JSON schema, loading, cross-validation, and
//! resolution of defaults.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complex::ComplexOptions;
use crate::domain::{Domain, DomainError, Factor};
use crate::expr::{self, ParseError};
use crate::field::{FieldError, ScalarField, Tolerances};
use crate::flow::FlowSettings;
use crate::metric::{Metric, MetricError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainConfig,
    pub function: String,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub complex: ComplexConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainConfig {
    Product { factors: Vec<FactorConfig> },
    Polytope { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FactorConfig {
    Circle { period: f64 },
    Interval([f64; 2]),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MetricConfig {
    #[default]
    Euclidean,
    Constant(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub active: Option<f64>,
    pub stationary: Option<f64>,
    pub level: Option<f64>,
    pub event_time: Option<f64>,
    pub crit: Option<f64>,
    pub eig: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_max: Option<f64>,
    pub max_events: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexConfig {
    pub epsilon: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config does not match the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cannot parse function: {0}")]
    Function(#[from] ParseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("polytope matrix A must be rectangular: row {row} has {got} entries, expected {expected}")]
    RaggedMatrix {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("tolerance `{name}` must be positive, got {value}")]
    BadTolerance { name: &'static str, value: f64 },
    #[error("flow budget `{name}` must be positive, got {value}")]
    BadBudget { name: &'static str, value: f64 },
}

/// A loaded, cross-validated problem with every default resolved.
#[derive(Debug)]
pub struct Problem {
    pub domain: Domain,
    pub field: ScalarField,
    pub tolerances: Tolerances,
    pub flow: FlowSettings,
    pub options: ComplexOptions,
    /// The resolved configuration, echoed into reports.
    pub resolved: ResolvedConfig,
}

/// Echo of the configuration after defaults were filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub domain: DomainConfig,
    pub function: String,
    pub metric: MetricConfig,
    pub tolerances: ResolvedTolerances,
    pub flow: ResolvedFlow,
    pub complex: ResolvedComplex,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTolerances {
    pub active: f64,
    pub stationary: f64,
    pub level: f64,
    pub event_time: f64,
    pub crit: f64,
    pub eig: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedFlow {
    pub t_max: f64,
    pub max_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedComplex {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub samples: usize,
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: u64,
    pub samples: Option<usize>,
    pub epsilon: Option<f64>,
}

pub fn load_problem(path: &str, overrides: &Overrides) -> Result<Problem, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_string(),
        source,
    })?;
    let config: Config = serde_json::from_str(&text)?;
    resolve(config, overrides)
}

pub fn resolve(config: Config, overrides: &Overrides) -> Result<Problem, LoadError> {
    let domain = build_domain(&config.domain)?;
    let n = domain.dim();

    let metric = match &config.metric {
        MetricConfig::Euclidean => Metric::Euclidean,
        MetricConfig::Constant(rows) => {
            let cols = rows.first().map_or(0, |r| r.len());
            for (i, r) in rows.iter().enumerate() {
                if r.len() != cols {
                    return Err(LoadError::RaggedMatrix {
                        row: i,
                        got: r.len(),
                        expected: cols,
                    });
                }
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Metric::Constant(DMatrix::from_row_slice(rows.len(), cols, &flat))
        }
    };

    let expression = expr::parse(&config.function, n)?;
    let field = ScalarField::new(expression, &metric, n)?;

    let defaults = Tolerances::for_domain(&domain);
    let t = &config.tolerances;
    let tolerances = Tolerances {
        active: t.active.unwrap_or(defaults.active),
        stationary: t.stationary.unwrap_or(defaults.stationary),
        level: t.level.unwrap_or(defaults.level),
        event_time: t.event_time.unwrap_or(defaults.event_time),
        crit: t.crit.unwrap_or(defaults.crit),
        eig: t.eig.unwrap_or(defaults.eig),
        cone: defaults.cone,
    };
    for (name, value) in [
        ("active", tolerances.active),
        ("stationary", tolerances.stationary),
        ("level", tolerances.level),
        ("event_time", tolerances.event_time),
        ("crit", tolerances.crit),
        ("eig", tolerances.eig),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(LoadError::BadTolerance { name, value });
        }
    }

    let flow_defaults = FlowSettings::default();
    let flow = FlowSettings {
        t_max: config.flow.t_max.unwrap_or(flow_defaults.t_max),
        max_events: config.flow.max_events.unwrap_or(flow_defaults.max_events),
        ..flow_defaults
    };
    if !(flow.t_max > 0.0) || !flow.t_max.is_finite() {
        return Err(LoadError::BadBudget {
            name: "t_max",
            value: flow.t_max,
        });
    }
    if flow.max_events == 0 {
        return Err(LoadError::BadBudget {
            name: "max_events",
            value: 0.0,
        });
    }

    let samples = overrides
        .samples
        .or(config.complex.samples)
        .unwrap_or_else(|| ComplexOptions::default().samples);
    let epsilon = overrides.epsilon.or(config.complex.epsilon);
    if let Some(e) = epsilon {
        if !(e > 0.0) || !e.is_finite() {
            return Err(LoadError::BadTolerance {
                name: "epsilon",
                value: e,
            });
        }
    }

    let options = ComplexOptions {
        samples,
        epsilon,
        seed: overrides.seed,
        flow: flow.clone(),
    };

    let resolved = ResolvedConfig {
        domain: config.domain.clone(),
        function: config.function.clone(),
        metric: config.metric.clone(),
        tolerances: ResolvedTolerances {
            active: tolerances.active,
            stationary: tolerances.stationary,
            level: tolerances.level,
            event_time: tolerances.event_time,
            crit: tolerances.crit,
            eig: tolerances.eig,
        },
        flow: ResolvedFlow {
            t_max: flow.t_max,
            max_events: flow.max_events,
        },
        complex: ResolvedComplex { epsilon, samples },
        seed: overrides.seed,
    };

    Ok(Problem {
        domain,
        field,
        tolerances,
        flow,
        options,
        resolved,
    })
}

fn build_domain(config: &DomainConfig) -> Result<Domain, LoadError> {
    match config {
        DomainConfig::Product { factors } => {
            let factors = factors
                .iter()
                .map(|f| match f {
                    FactorConfig::Circle { period } => Factor::Circle { period: *period },
                    FactorConfig::Interval([lo, hi]) => Factor::Interval { lo: *lo, hi: *hi },
                })
                .collect();
            Ok(Domain::product(factors)?)
        }
        DomainConfig::Polytope { a, b } => {
            let rows = a.len();
            let cols = a.first().map_or(0, |r| r.len());
            for (i, r) in a.iter().enumerate() {
                if r.len() != cols {
                    return Err(LoadError::RaggedMatrix {
                        row: i,
                        got: r.len(),
                        expected: cols,
                    });
                }
            }
            let flat: Vec<f64> = a.iter().flatten().copied().collect();
            Ok(Domain::polytope(
                DMatrix::from_row_slice(rows, cols, &flat),
                nalgebra::DVector::from_vec(b.clone()),
            )?)
        }
    }
}
