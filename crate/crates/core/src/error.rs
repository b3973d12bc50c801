use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("unknown reaction `{0}`")]
    UnknownReaction(String),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("invalid perturbation: {0}")]
    Perturbation(String),

    #[error("invalid source specification: {0}")]
    SourceSpec(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("marked set is empty")]
    EmptyMarked,

    #[error("source is not connected to the marked set: {0}")]
    Disconnected(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("network is not rigid: {0}")]
    NotRigid(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
