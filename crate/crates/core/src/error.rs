use thiserror::Error;

use crate::numerics::NumericsError;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("pilot generation: {0}")]
    Pilots(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("CFAR guard window of {window} cells does not fit a grid of {grid} cells")]
    GuardWindow { window: usize, grid: usize },
    #[error("group {group}: {clusters} MPC clusters but only {chains} RF chains; raise rf_chains or use the drop-weakest allocation policy")]
    TooFewChains {
        group: usize,
        clusters: usize,
        chains: usize,
    },
    #[error("group {group}, cluster {cluster}: masked pilot block has rank {rank}, expected {expected}")]
    RankDeficientCluster {
        group: usize,
        cluster: usize,
        rank: usize,
        expected: usize,
    },
    #[error("training matrix {rows}x{cols} has rank {rank}; least squares needs full rank")]
    RankDeficientTraining { rows: usize, cols: usize, rank: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
