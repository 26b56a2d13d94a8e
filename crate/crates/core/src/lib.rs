//! Hierarchical federated learning over a social network with data sharing and
//! client mobility: scenario generation, cost model, per-ES resource allocation,
//! client-to-ES association, client selection, differential privacy and a
//! round-by-round training simulator.

pub mod association;
pub mod config;
pub mod costmodel;
pub mod experiment;
pub mod fedsim;
pub mod learner;
pub mod mobility;
pub mod oracle;
pub mod privacy;
pub mod resource;
pub mod rng;
pub mod scenario;
pub mod selection;
pub mod socialnet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Graph(#[from] socialnet::GraphError),
    #[error(transparent)]
    Placement(#[from] mobility::PlacementError),
    #[error(transparent)]
    Cost(#[from] costmodel::CostError),
    #[error(transparent)]
    Allocation(#[from] resource::P1Error),
    #[error(transparent)]
    Association(#[from] association::AssocError),
    #[error(transparent)]
    Selection(#[from] selection::SelectError),
    #[error(transparent)]
    Privacy(#[from] privacy::DpError),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output error: {0}")]
    Output(String),
}

impl Error {
    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Graph(_) => "graph",
            Error::Placement(_) => "placement",
            Error::Cost(_) => "cost",
            Error::Allocation(_) => "allocation",
            Error::Association(_) => "association",
            Error::Selection(selection::SelectError::EdcrAboveMax { .. }) => "edcr-above-max",
            Error::Selection(_) => "selection",
            Error::Privacy(_) => "privacy",
            Error::Round { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Output(_) => "output",
        }
    }

    /// Whether the inputs, rather than the run, are at fault.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::Config(_) | Error::Privacy(_) => true,
            Error::Selection(e) => matches!(
                e,
                selection::SelectError::EdcrAboveMax { .. } | selection::SelectError::InvalidTarget(_)
            ),
            Error::Round { source, .. } => source.is_invalid_input(),
            _ => false,
        }
    }
}
