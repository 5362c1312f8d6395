use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("qubit count {0} outside supported range 1..=20")]
    QubitCount(usize),

    #[error("qubit index {index} out of range for {n} qubits")]
    QubitIndex { index: usize, n: usize },

    #[error("subset mask {bits:#b} does not fit {n} qubits")]
    MaskRange { bits: u32, n: usize },

    #[error("the empty subset has no phase invariant")]
    EmptySubset,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("time {t} outside pulse interval [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate hyperfine geometry for nucleus {0}: A_zz + gamma*B0 = 0 with A_perp = 0")]
    DegenerateAngle(String),

    #[error("diagonal entry {index} has magnitude {magnitude:.3e}; phase ill-conditioned")]
    IllConditioned { index: usize, magnitude: f64 },

    #[error("embedding columns are not orthonormal (deviation {0:.3e})")]
    Embedding(f64),

    #[error("missing invariant for subset {0:#b}")]
    MissingInvariant(u32),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
