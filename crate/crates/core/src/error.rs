use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A data row failed validation. `row` is 1-based and counts data rows only.
    #[error("row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no observation has a finite inspection time")]
    NoFiniteEndpoint,

    #[error("{what}: argument {value} outside the domain")]
    Domain { what: &'static str, value: f64 },

    #[error("observation {obs}: cumulative hazard term {value} is not strictly positive")]
    NonPositiveHazard { obs: usize, value: f64 },

    #[error("cumulative hazard {value} at t = {time} is negative")]
    NegativeCumulativeHazard { time: f64, value: f64 },

    #[error("invalid parameter state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("beta curvature matrix is singular even after ridge adjustment")]
    SingularCurvature,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("step halving exhausted at iteration {iteration}")]
    StepHalvingExhausted { iteration: usize, trace: Vec<f64> },

    #[error("profile solve at beta = {beta:?} did not converge")]
    InnerNonConvergence { beta: Vec<f64>, trace: Vec<f64> },

    #[error("-D is not positive definite (eigenvalues of D: {eigenvalues:?}); try a different h_n")]
    NotPositiveDefinite { eigenvalues: Vec<f64> },

    #[error("{failed} of {total} bootstrap replicates failed")]
    UnstableResampling { failed: usize, total: usize },

    #[error("could not bracket the event time for target cumulative hazard {target}")]
    BracketFailure { target: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
