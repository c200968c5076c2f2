//! Error type shared across the crate.

/// Errors produced by model validation, solvers, abstraction discovery,
/// and estimators.
#[derive(Debug, thiserror::Error)]
pub enum OpeError {
    #[error("invalid input:\n{0}")]
    Validation(String),

    #[error("coverage violated: pi({action}|{state}) > 0 but b({action}|{state}) = 0")]
    Coverage { state: usize, action: usize },

    #[error("ratio support violated: numerator positive but denominator zero at (a={action}, s={state})")]
    Support { state: usize, action: usize },

    #[error("chain has {} recurrent classes, stationary distribution is not unique; classes: {classes:?}", classes.len())]
    ReducibleChain { classes: Vec<Vec<usize>> },

    #[error("stationary mass is zero for states {states:?}; {context} is undefined there")]
    ZeroStationaryMass { states: Vec<usize>, context: &'static str },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("partition block {block} is empty")]
    EmptyBlock { block: usize },

    #[error("partition block {block} has zero total stationary mass")]
    ZeroMassBlock { block: usize },

    #[error("estimated behavior probability is zero for realized pair (a={action}, x={block})")]
    ZeroBehaviorProb { block: usize, action: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, OpeError>;
