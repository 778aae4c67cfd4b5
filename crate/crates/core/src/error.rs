use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Threshold chain or interval structure is broken at a sampled state.
    #[error("invalid switching geometry at (i={i}, j={j}, x={x}): {reason}")]
    GeometryInvalid {
        i: usize,
        j: usize,
        x: f64,
        reason: String,
    },

    /// A numerical routine failed (quadrature, linear solve, positivity loss).
    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// Configuration or precondition violated before any computation began.
    #[error("configuration error: {0}")]
    Config(String),

    /// A point was queried outside the domain on which an object is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Simulated state became non-finite.
    #[error("simulation blew up at step {step} (t={time}): {detail}")]
    Simulation {
        step: usize,
        time: f64,
        detail: String,
    },

    /// Empirical output contradicts the model beyond sampling noise.
    #[error("statistical anomaly: {0}")]
    StatisticalAnomaly(String),

    /// Requested resolution is too coarse for the requested quantity.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A fixed-point iteration did not reach tolerance.
    #[error("no convergence after {iterations} iterations (last change {last:.3e}, tol {tol:.3e})")]
    NonConvergence {
        iterations: usize,
        tol: f64,
        last: f64,
        history: Vec<f64>,
    },

    /// Coefficient expression failed to parse.
    #[error("syntax error at byte {offset}: {message}\n{excerpt}")]
    Syntax {
        offset: usize,
        message: String,
        excerpt: String,
    },

    /// Coefficient expression failed to evaluate.
    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Attach a prefix to the human-readable part of the error.
    pub fn context(self, prefix: &str) -> Self {
        match self {
            Error::Numeric { context, detail } => Error::Numeric {
                context: format!("{prefix}: {context}"),
                detail,
            },
            Error::Config(m) => Error::Config(format!("{prefix}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{prefix}: {m}")),
            Error::Resolution(m) => Error::Resolution(format!("{prefix}: {m}")),
            Error::Eval(m) => Error::Eval(format!("{prefix}: {m}")),
            other => other,
        }
    }

    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::GeometryInvalid { .. } => "geometry_invalid",
            Error::Numeric { .. } => "numeric",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Simulation { .. } => "simulation",
            Error::StatisticalAnomaly(_) => "statistical_anomaly",
            Error::Resolution(_) => "resolution",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Syntax { .. } => "syntax",
            Error::Eval(_) => "eval",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
