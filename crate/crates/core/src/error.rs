use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a consensus network needs at least 2 agents, got {0}")]
    TooFewAgents(usize),

    #[error("edge ({source_agent}, {target_agent}) references an agent outside 1..={n}")]
    AgentOutOfRange {
        source_agent: usize,
        target_agent: usize,
        n: usize,
    },

    #[error("self-loop on agent {0}; the diagonal of L is implied by the row sum")]
    SelfLoop(usize),

    #[error("duplicate edge ({source_agent}, {target_agent})")]
    DuplicateEdge {
        source_agent: usize,
        target_agent: usize,
    },

    #[error("weight {weight} on edge ({source_agent}, {target_agent}) is negative")]
    NegativeWeight {
        source_agent: usize,
        target_agent: usize,
        weight: f64,
    },

    #[error("incoming weights of agent {agent} sum to {sum} > 1")]
    RowSumExceeded { agent: usize, sum: f64 },

    #[error("the communication digraph is not strongly connected")]
    NotStronglyConnected,

    #[error("ring needs {n} explicit weights, got {got}")]
    WeightCount { n: usize, got: usize },

    #[error("eigen-solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("initial state of agent {agent} is {value}, outside ({x_min}, {x_max})")]
    InitialStateOutOfRange {
        agent: usize,
        value: f64,
        x_min: f64,
        x_max: f64,
    },

    #[error("quantizer range must satisfy x_min < x_max, got ({0}, {1})")]
    InvalidRange(f64, f64),

    #[error("quantizer width beta must be positive, got {0}")]
    NonPositiveBeta(f64),

    #[error("bit width must lie in 1..=63, got {0}")]
    InvalidBits(u32),

    #[error("code {code} does not fit in {bits} bits")]
    CodeOutOfRange { code: u64, bits: u32 },

    #[error("|lambda2| = {0} is not contractive (must be < 1)")]
    Lambda2NotContractive(f64),

    #[error("eta = {eta} must lie in (|lambda2|, 1) = ({lambda2}, 1)")]
    EtaOutOfRange { eta: f64, lambda2: f64 },

    #[error("rate budget leaves {0} bits per message")]
    InsufficientRate(i64),

    #[error("expected a {expected} trace, got {got}")]
    ProtocolMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("gamma must lie in (0, 1), got {0}")]
    InvalidGamma(f64),

    #[error("horizon must be at least 1")]
    EmptyHorizon,

    #[error("trajectory has not reached consensus (final envelope width {width:e})")]
    NotConverged { width: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
