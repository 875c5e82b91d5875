//! Error types for every stage of the pipeline.
//!
//! Each subsystem has its own error enum; [`Error`] wraps them so callers that
//! drive the full pipeline can use a single `Result`.

use thiserror::Error;

/// Structural problems found while validating network data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("electric network has no buses")]
    NoBuses,
    #[error("electric network is disconnected: bus {bus} is unreachable from bus 1")]
    Disconnected { bus: usize },
    #[error("heating network is disconnected: node {node} is unreachable from node 1")]
    HeatDisconnected { node: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: String, value: f64 },
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: String, value: f64 },
    #[error("{what} refers to unknown {kind} {index}")]
    DanglingIndex {
        what: String,
        kind: &'static str,
        index: usize,
    },
    #[error("line ({from},{to}) is a self loop")]
    SelfLoop { from: usize, to: usize },
    #[error("lines ({a},{b}) and ({b},{a}) both present; orientation must be unique")]
    AntiParallelLine { a: usize, b: usize },
    #[error("heat edge {edge} has identical head and tail node {node}")]
    DegenerateEdge { edge: usize, node: usize },
    #[error("mass flow imbalance {imbalance:e} at heat node {node}")]
    MassFlowImbalance { node: usize, imbalance: f64 },
    #[error("duplicate {what}: {index}")]
    Duplicate { what: &'static str, index: usize },
    #[error("heat edge {edge} is tagged {tag} but {reason}")]
    EdgeTagMismatch {
        edge: usize,
        tag: &'static str,
        reason: &'static str,
    },
    #[error("malformed incidence row {row}: {reason}")]
    MalformedIncidence { row: usize, reason: &'static str },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("mode 2 needs a converter link susceptance")]
    MissingConverterLink,
    #[error("{what}: expected {expected} controller blocks, got {got}")]
    BlockCount {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("converter buses can only be attached in mode 2")]
    ConverterInMode1,
    #[error("bus {bus} is itself a converter bus")]
    HostIsConverter { bus: usize },
    #[error("nominal flow {nominal} on line ({from},{to}) exceeds susceptance {susceptance}")]
    InfeasibleNominalFlow {
        from: usize,
        to: usize,
        nominal: f64,
        susceptance: f64,
    },
    #[error("initial line angles are not cycle-consistent (residual {residual:e})")]
    InconsistentAngles { residual: f64 },
}

/// Errors raised by generation blocks and their audits.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("block did not settle under constant input {input}: {reason}")]
    NonSettling { input: f64, reason: String },
    #[error("declared characteristic {declared} disagrees with settled output {settled}")]
    CharacteristicMismatch { declared: f64, settled: f64 },
    #[error("trace length mismatch: {what} has {got} samples, expected {expected}")]
    GridMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("audit needs at least two samples")]
    TooShort,
}

/// Numerical failures during integration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("non-finite value in {component} at t = {time}")]
    NonFinite { component: String, time: f64 },
    #[error("state blew up: |{component}| = {magnitude:e} exceeds {bound:e} at t = {time}")]
    Blowup {
        component: String,
        magnitude: f64,
        bound: f64,
        time: f64,
    },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("state vector has length {got}, expected {expected}")]
    StateLength { got: usize, expected: usize },
}

/// Failures of the analytic equilibrium and dispatch oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("aggregate droop is zero; equilibrium frequency undefined")]
    ZeroDroop,
    #[error("KKT matrix is singular: {0}")]
    Singular(String),
    #[error("pump coefficient {what} differs across pumps; joint weighting is ambiguous")]
    HeterogeneousPumps { what: &'static str },
    #[error("{0}")]
    Unsupported(String),
    #[error("power flow did not converge: {0}")]
    PowerFlow(String),
    #[error("demand {demand} lies outside the range of the aggregate characteristic")]
    BracketFailure { demand: f64 },
    #[error("trajectory tail has not settled: {component} moves {peak_to_peak:e} peak-to-peak")]
    Unsettled {
        component: String,
        peak_to_peak: f64,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Problems with a scenario file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Top-level error for pipeline callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 validation, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Network(_) | Error::Scenario(_) => 1,
            Error::Control(_) | Error::Simulation(_) | Error::Dispatch(_) => 2,
            Error::Io { .. } | Error::Csv(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
