use thiserror::Error;

use crate::certificate::PropertyCertificate;
use crate::retraction::StabilizationStep;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (dimension mismatch, empty set, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A valid input asked for something this build does not provide.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative solver ran out of iterations. `trace` holds the last
    /// successive differences it observed.
    #[error("solver error: {message}")]
    Solver { message: String, trace: Vec<f64> },

    /// No schedule entry satisfied the stabilization test for some stage.
    #[error("stabilization failed at stage {stage}: smallest probe delta {best_delta:e} exceeds {tolerance:e}")]
    Stabilization {
        stage: usize,
        tolerance: f64,
        best_delta: f64,
        trace: Vec<StabilizationStep>,
    },

    /// A hypothesis certificate failed, so the requested construction was refused.
    #[error("hypothesis certificate FAIL: {}", .0.property)]
    Hypothesis(Box<PropertyCertificate>),

    /// A multi-stage construction failed at a specific stage.
    #[error("stage {stage} failed: {source}")]
    Stage { stage: usize, source: Box<Error> },

    /// An enumeration exceeded its configured size limit.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
