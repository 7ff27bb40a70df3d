use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("resolvent parameter {lambda} must exceed the growth bound {alpha}")]
    ResolventDomain { lambda: f64, alpha: f64 },

    #[error("linear system is numerically singular")]
    NumericalSingularity,

    #[error("non-finite value produced: {0}")]
    NumericalRange(String),

    #[error("ellipticity violated at z = {z}: q = {q} < sigma = {sigma}")]
    Ellipticity { z: f64, q: f64, sigma: f64 },

    #[error("coefficient bound violated at z = {z}: |{name}| = {value} > {bound}")]
    CoefficientBound {
        name: &'static str,
        z: f64,
        value: f64,
        bound: f64,
    },

    #[error("semigroup bound ||exp(tA)|| <= M e^(alpha t) fails at t = {t}: {norm} > {bound}")]
    Certification { t: f64, norm: f64, bound: f64 },

    #[error("step size must be positive, got {0}")]
    StepSize(f64),

    #[error("empirical measures have different atom counts ({0} vs {1})")]
    SupportMismatch(usize, usize),

    #[error("time grids differ: {0}")]
    Grid(String),

    #[error("ensembles are not coupled: {0}")]
    Coupling(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config {
            line: 0,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
