use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token id {id} is out of range for a vocabulary of size {size}")]
    InvalidTokenId { id: u32, size: usize },
    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateSurface(String),
    #[error("vocabulary kind does not support this operation")]
    WrongVocabularyKind,
    #[error("invalid candidate set: {0}")]
    InvalidCandidateSet(String),
    #[error("requested {requested} candidates but only {available} are available")]
    CandidateCountOutOfRange { requested: usize, available: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("unit id {id} is out of range for {k} units")]
    InvalidUnitId { id: u32, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model has no unit encoder")]
    MissingUnitEncoder,
    #[error("invalid target sequence: {0}")]
    InvalidTarget(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("k-means needs at least {k} distinct points, got {distinct}")]
    TooFewDistinctPoints { k: usize, distinct: usize },
    #[error("feature dimension {got} does not match quantizer dimension {expected}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("empty reference")]
    EmptyReference,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
