use thiserror::Error;

use crate::network::ValidationReport;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network topology:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("directed cycle through node `{0}`")]
    DirectedCycle(String),
    #[error("adjacency does not match pipes: {0}")]
    AdjacencyMismatch(String),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("CFL condition violated on {context}: courant number {courant} > 1")]
    Cfl { context: String, courant: f64 },
    #[error("negative velocity {0} (flow reversal is not supported)")]
    NegativeVelocity(f64),
    #[error("mixing requires at least one inflow or an injection")]
    EmptyMix,
    #[error("mass flow rate must be positive, got {0}")]
    NonPositiveFlow(f64),
    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("invalid schedule `{id}`: {reason}")]
    Schedule { id: String, reason: String },
    #[error("query ({x}, {t}) outside the domain [0, {length}] x [0, {horizon}]")]
    QueryOutOfDomain { x: f64, t: f64, length: f64, horizon: f64 },
    #[error("scenario coverage: {0}")]
    Coverage(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("backward called on a tape with no recorded forward pass")]
    EmptyTape,
    #[error("prediction/target vectors must be non-empty and equal length ({predictions} vs {targets})")]
    LossShape { predictions: usize, targets: usize },
    #[error("non-finite gradient at parameter {0}: training diverged")]
    Diverged(usize),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown pipe `{0}`")]
    UnknownPipe(String),
    #[error("missing branch input for pipe `{0}`")]
    MissingInput(String),
    #[error("{0} outside [0, 1]")]
    QueryOutOfRange(&'static str),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint topology hash {checkpoint} does not match network {network}")]
    TopologyMismatch { checkpoint: String, network: String },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("unknown pipe `{0}` in sensor layout")]
    UnknownPipe(String),
    #[error("query time {0} s is not a stored snapshot time")]
    NotASnapshot(f64),
    #[error("simulation result is missing the t = 0 snapshot")]
    MissingInitialSnapshot,
    #[error("dataset topology hash {file} does not match network {network}")]
    TopologyMismatch { file: String, network: String },
    #[error("unsupported dataset schema version {0}")]
    Version(u32),
    #[error("malformed dataset file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
