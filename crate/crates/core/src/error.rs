use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("no discordant clusters; estimators undefined")]
    NoDiscordantClusters,

    #[error("profile root is infinite (outcome sum {outcome_sum} in a cluster of size {size})")]
    InfiniteRoot { outcome_sum: usize, size: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("state space of {states} exceeds the cap of {cap}")]
    StateSpace { states: usize, cap: usize },

    #[error("design matrix with cluster indicators is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("divergence: possible separation / nonexistent MLE (|beta|_inf = {norm:.3e})")]
    Divergence { norm: f64 },

    #[error("max iterations exceeded ({0})")]
    MaxIterations(usize),

    #[error("quadrature not converged (last change {change:.3e} at {nodes} nodes)")]
    QuadratureNotConverged { change: f64, nodes: usize },

    #[error("design precondition violated: {0}")]
    Design(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InfiniteRoot { .. }
                | Error::StateSpace { .. }
                | Error::RankDeficient { .. }
                | Error::Divergence { .. }
                | Error::MaxIterations(_)
                | Error::QuadratureNotConverged { .. }
                | Error::NoDiscordantClusters
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
