use thiserror::Error;

use crate::tomofit::RankScan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank mismatch: expected rank {expected}, found numerical rank {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("incompatible models: {0}")]
    IncompatibleModels(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The H-representation does not describe a bounded set; `ray` is a
    /// recession direction of the feasible region.
    #[error("polyhedron is unbounded along {ray:?}")]
    Unbounded { ray: Vec<f64> },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no rank satisfies the selection criterion")]
    AmbiguousSelection { scan: Box<RankScan> },

    #[error("degenerate witness: {0}")]
    DegenerateWitness(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    /// Wraps `self` with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
