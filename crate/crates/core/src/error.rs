use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecFunError {
    #[error("cylinder function argument must be finite and positive, got {x}")]
    Domain { x: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("placement saturated: placed {placed} of {requested} cavities (seed {seed})")]
    Saturation {
        placed: usize,
        requested: usize,
        seed: u64,
    },
    #[error("cavity index {index} out of range for a layout of {count}")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("distance from cavity {index} to itself is undefined (q = 0)")]
    SelfDistance { index: usize },
    #[error("malformed layout data: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is numerically singular: pivot {pivot:e} at column {column}")]
    Singular { pivot: f64, column: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScatterError {
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("system needs {bytes} bytes, above the configured cap of {cap} bytes")]
    SystemTooLarge { bytes: u64, cap: u64 },
    #[error("point ({x}, {y}) lies inside cavity {cavity} (mirror q = {mirror})")]
    InteriorPoint {
        x: f64,
        y: f64,
        cavity: usize,
        mirror: i32,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("curve shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("ensemble needs at least one layout")]
    Empty,
    #[error("layout {index} (seed {seed}) failed: {message}")]
    Layout {
        index: usize,
        seed: u64,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomogenizeError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("geometrically infeasible: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error{}: {message}", line_suffix(*line))]
    Syntax {
        line: Option<usize>,
        message: String,
    },
    #[error("unknown key `{key}`{}", line_suffix(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("type mismatch for `{key}`{}: expected {expected}", line_suffix(*line))]
    TypeMismatch {
        key: String,
        line: Option<usize>,
        expected: &'static str,
    },
    #[error("constraint violated for `{key}`{}: {message}", line_suffix(*line))]
    Constraint {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" (line {l})"),
        None => String::new(),
    }
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::UnknownKey { key, .. }
            | ConfigError::TypeMismatch { key, .. }
            | ConfigError::Constraint { key, .. } => Some(key),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::TypeMismatch { line, .. }
            | ConfigError::Constraint { line, .. } => *line,
        }
    }
}

/// Top-level error for the pipeline and the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Homogenize(#[from] HomogenizeError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Geometry(_) => 3,
            Error::Scatter(_) | Error::SpecFun(_) => 4,
            Error::Ensemble(_) => 5,
            Error::Homogenize(_) => 6,
            Error::Io { .. } => 7,
            Error::Verification(_) => 8,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
