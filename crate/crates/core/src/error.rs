use std::path::PathBuf;

use thiserror::Error;

use crate::expr::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between `{left}` and `{right}`")]
    GridMismatch { left: String, right: String },

    #[error("non-finite value in {field} at q = {q:.6}, p = {p:.6}")]
    NonFinite { field: String, q: f64, p: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("cannot evaluate `{expr}` at q = {q:.6}, p = {p:.6}, t = {t:.6}: {reason}")]
    Eval {
        expr: String,
        q: f64,
        p: f64,
        t: f64,
        reason: String,
    },

    #[error("boundary flux: {0}")]
    BoundaryFlux(String),

    #[error("flow leaves the grid through the {boundary} boundary (q = {q:.6}, p = {p:.6})")]
    FlowExit { boundary: &'static str, q: f64, p: f64 },

    #[error("dt = {dt:.4e} exceeds the diffusion CFL bound {bound:.4e} ({substeps} substeps of at most {dt_sub:.4e})")]
    Cfl {
        dt: f64,
        bound: f64,
        substeps: usize,
        dt_sub: f64,
    },

    #[error("stochastic step clipped {fraction:.3e} of the mass (limit 1e-2); reduce dt")]
    Clipping { fraction: f64 },

    #[error("outcome incompatible with prior at grid resolution (posterior mass {mass:e})")]
    IncompatibleOutcome { mass: f64 },

    #[error("density has zero or non-finite mass ({0:e})")]
    DegenerateDensity(f64),

    #[error("snapshot cadence too coarse: {per_tau:.2} snapshots per diffusion time, need at least 8")]
    CoarseCadence { per_tau: f64 },

    #[error("ensemble too small: {got} trajectories, need at least {need}")]
    EnsembleTooSmall { got: usize, need: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{path}: malformed artifact: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::Parse(_) | Error::InvalidParameter(_) | Error::Manifest { .. } => {
                ErrorKind::Config
            }
            Error::Io { .. } | Error::Artifact { .. } => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
