use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    QubitOutOfRange { index: usize, n_qubits: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid bitstring {0:?}")]
    Bitstring(String),
    #[error("{}{msg}", if *line > 0 { format!("line {line}: ") } else { String::new() })]
    Parse { line: usize, msg: String },
    #[error("{0} qubits exceeds the dense-matrix limit of {1}")]
    TooLarge(usize, usize),
    #[error("Pauli string {0} is diagonal; it has no star qubit")]
    DiagonalString(String),
    #[error("measurement plan does not match term: {0}")]
    PlanMismatch(String),
    #[error("degenerate denominator {0:e}")]
    DegenerateDenominator(f64),
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
