use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a physical formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A property the algorithm guarantees did not hold; signals a bug.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("moment solve did not converge in cell {cell} after retry: {detail}")]
    NonConvergence { cell: usize, detail: String },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Config(#[from] crate::scenario::ConfigError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn in_cell(self, cell: usize) -> Self {
        match self {
            e @ Error::Cell { .. } => e,
            e => Error::Cell {
                cell,
                source: Box::new(e),
            },
        }
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Invariant(_) => "invariant",
            Error::LinearSolve(_) => "linear-solve",
            Error::NonConvergence { .. } => "non-convergence",
            Error::Cell { source, .. } => source.category(),
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
