use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration too large: {states} sequences exceeds the cap of {cap}")]
    EnumerationTooLarge { states: u128, cap: usize },

    #[error("absolute continuity violated at sequence index {index}: reference probability is zero where the numerator is positive")]
    AbsoluteContinuity { index: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("all weights are zero")]
    DegenerateWeights,

    #[error("sequence spaces differ: (V={left_vocab}, n={left_len}) vs (V={right_vocab}, n={right_len})")]
    SpaceMismatch {
        left_vocab: usize,
        left_len: usize,
        right_vocab: usize,
        right_len: usize,
    },

    #[error("architectures differ")]
    ArchMismatch,

    #[error("hessian too large: {params} parameters exceeds the cap of {cap}")]
    HessianTooLarge { params: usize, cap: usize },

    #[error("singular hessian system (damping {damping}); use a positive damping")]
    SingularHessian { damping: f64 },

    #[error("training diverged at step {step}: loss {loss} exceeds 10x the initial loss {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
