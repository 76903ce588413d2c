use thiserror::Error;

use crate::system::Configuration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("configuration has {got} electrons but the system has {expected}")]
    ElectronCountMismatch { expected: usize, got: usize },

    #[error("coalescent configuration: minimum distance {distance:e} is below tolerance {tolerance:e}")]
    CoalescentConfiguration { distance: f64, tolerance: f64 },

    #[error("too close to a singularity: distance {distance:e} must exceed 10·h = {limit:e}")]
    TooCloseToSingularity { distance: f64, limit: f64 },

    #[error("cluster must contain at least one electron")]
    EmptyCluster,

    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("decay certificate violated: |psi| = {value:e} exceeds c·exp(-λ|x|) = {bound:e}")]
    CertificateViolated {
        config: Configuration,
        value: f64,
        bound: f64,
    },

    #[error("no sample with positive weight found after {proposals} proposals")]
    SamplingExhausted { proposals: u64 },

    #[error("{0} requires at least two electrons")]
    TooFewElectrons(&'static str),

    #[error("derivative order {0} is not supported by the analytic estimator (max 2)")]
    UnsupportedOrder(usize),

    #[error("model provides no analytic derivatives")]
    MissingDerivatives,

    #[error("signal below noise at radius {radius}: |value| = {value:e}, std_error = {std_error:e}")]
    SignalBelowNoise {
        radius: f64,
        value: f64,
        std_error: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
