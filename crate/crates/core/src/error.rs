use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown token {0:?} and no fallback token configured")]
    UnknownToken(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("prefix of {len} tokens exceeds context window of {window}")]
    ContextWindowExceeded { len: usize, window: usize },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("combined logits are not finite at index {index}")]
    NonFiniteResult { index: usize },
    #[error("distribution has no finite mass")]
    DegenerateDistribution,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("enumeration of {needed} sequences exceeds budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("invalid steering spec: {0}")]
    InvalidSpec(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty candidate continuation at index {0}")]
    EmptyCandidate(usize),
    #[error("no candidates supplied")]
    EmptyCandidates,
    #[error("duplicate candidate label {0:?}")]
    DuplicateLabel(String),
    #[error("every candidate likelihood is non-finite")]
    AllLikelihoodsDegenerate,
    #[error("all values are equal; range is degenerate")]
    DegenerateRange,
    #[error("zero variance in ranks")]
    DegenerateVariance,
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("sequence too short: need at least {needed} tokens, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("reference is empty")]
    EmptyReference,
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("sparse report is empty")]
    EmptyReport,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by remote endpoint")]
    RateLimited,
    #[error("remote rejected request with status {status}: {body}")]
    RemoteRejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Remote failures worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::RateLimited)
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
