use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of a map (rate outside `[0,1]`,
    /// price outside `[p_min, p_max]`).
    #[error("{what} {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative routine failed to reach its tolerance. `best` is the
    /// last iterate so callers can still inspect or use it.
    #[error("numerical failure in {routine}: residual {residual:.3e} after {iterations} iterations")]
    Numerical {
        routine: &'static str,
        residual: f64,
        iterations: usize,
        best: Vec<f64>,
    },

    #[error("instance mismatch: {0}")]
    Instance(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
