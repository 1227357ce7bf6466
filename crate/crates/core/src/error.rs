use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:.3e})")]
    SinkhornNonConvergence { iterations: usize, marginal_error: f64 },

    #[error("grid too small: {lost_mass:.3e} of the mass falls outside the grid")]
    GridTooSmall { lost_mass: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("coefficient needs a density view of the measure argument")]
    MissingDensityView,

    #[error("coefficient evaluation failed for particle {index} at t = {time}: {reason}")]
    CoefficientEvaluation { index: usize, time: f64, reason: String },

    #[error("CFL violation: dt = {dt:.3e} exceeds stable bound {bound:.3e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("nonlinear solve did not converge after {iterations} Newton iterations (residual {residual:.3e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("clipped mass {clipped:.3e} exceeds the abort threshold {limit:.1e}")]
    ClippedMassExceeded { clipped: f64, limit: f64 },

    #[error("flow does not cover [{start}, {end}] (available [{available_start}, {available_end}])")]
    FlowCoverage { start: f64, end: f64, available_start: f64, available_end: f64 },

    #[error("time {t} is outside the horizon [{start}, {end}]")]
    OutsideHorizon { t: f64, start: f64, end: f64 },

    #[error("ergodicity harness requires lambda > kappa (got lambda = {lambda}, kappa = {kappa})")]
    ErgodicityHypothesis { lambda: f64, kappa: f64 },

    #[error("no convergence to an invariant law within horizon {horizon} (last increment {increment:.3e})")]
    InvariantNonConvergence { horizon: f64, increment: f64 },

    #[error("potential |V| = {value:.3e} exceeds declared bound {bound:.3e} at replica {replica}, t = {time}, x = {x:?}")]
    UnboundedPotential { value: f64, bound: f64, replica: usize, time: f64, x: Vec<f64> },

    #[error("finite-difference step rejected: {0}")]
    FiniteDifferenceStep(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
