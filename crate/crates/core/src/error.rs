//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input failed a structural precondition (non-finite, wrong dimension, ...).
    InvalidInput(String),
    /// A parameter lies outside its admissible range.
    InvalidParameter(String),
    /// Requested geodesic data beyond the injectivity radius.
    InjectivityExceeded { length: f64, radius: f64 },
    /// Distance partials are undefined at coincident base points.
    ZeroDistance,
    /// A trajectory left the admissible momentum region.
    Escape { p_norm: f64, bound: f64, time: f64 },
    /// The Hamiltonian does not agree with the kinetic term on the boundary collar.
    NonCompliant(String),
    /// No stage count up to the cap passed the twist check.
    TwistCheckFailed { last_n: usize, worst_margin: f64 },
    /// A Newton solve did not reach the residual tolerance.
    NewtonDivergence { residual: f64, iterations: usize },
    /// The solved preimage lies outside the validated region.
    OutOfRange { p_norm: f64, bound: f64 },
    /// A sequence pair could not be resolved through its stage.
    OutOfDomain { pair: usize, detail: String },
    /// A stage Jacobian momentum block was numerically singular.
    SingularBlock { pair: usize },
    /// The operation requires a critical sequence.
    NonCritical { residual: f64 },
    /// Multiplier extraction from determinant samples failed.
    InterpolationFailure(String),
    /// The two multiplier routes disagree beyond tolerance.
    CrossValidationFailed { max_rel_error: f64 },
    /// A fiber intersection landed on the momentum boundary.
    BoundaryIntersection { p_norm: f64, bound: f64 },
    /// The linking condition does not hold, so the diagonal search is undefined.
    LinkingUnsatisfied,
    /// Gradient vanished on an entire boundary face cycle; inconsistent setup.
    ExcludedByHypothesis(String),
    /// Generic numerical failure with diagnostics.
    NumericFailure(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InjectivityExceeded { length, radius } => write!(
                f,
                "geodesic length {length} reaches the injectivity radius {radius}"
            ),
            Error::ZeroDistance => write!(f, "distance partials undefined at coincident points"),
            Error::Escape {
                p_norm,
                bound,
                time,
            } => write!(
                f,
                "trajectory escaped: |p| = {p_norm} > {bound} at t = {time}"
            ),
            Error::NonCompliant(msg) => write!(f, "non-compliant Hamiltonian: {msg}"),
            Error::TwistCheckFailed {
                last_n,
                worst_margin,
            } => write!(
                f,
                "twist check failed up to N = {last_n} (worst margin {worst_margin:e})"
            ),
            Error::NewtonDivergence {
                residual,
                iterations,
            } => write!(
                f,
                "Newton solve stalled at residual {residual:e} after {iterations} iterations"
            ),
            Error::OutOfRange { p_norm, bound } => write!(
                f,
                "preimage |p| = {p_norm} outside the validated region (bound {bound})"
            ),
            Error::OutOfDomain { pair, detail } => {
                write!(f, "sequence pair {pair} not in the stage domain: {detail}")
            }
            Error::SingularBlock { pair } => {
                write!(f, "singular momentum block at sequence pair {pair}")
            }
            Error::NonCritical { residual } => {
                write!(f, "sequence is not critical (|dW| = {residual:e})")
            }
            Error::InterpolationFailure(msg) => {
                write!(f, "multiplier interpolation failed: {msg}")
            }
            Error::CrossValidationFailed { max_rel_error } => write!(
                f,
                "multiplier routes disagree (max relative error {max_rel_error:e})"
            ),
            Error::BoundaryIntersection { p_norm, bound } => write!(
                f,
                "fiber intersection touches the boundary: |p| = {p_norm} vs C = {bound}"
            ),
            Error::LinkingUnsatisfied => write!(f, "linking condition not satisfied"),
            Error::ExcludedByHypothesis(msg) => write!(f, "excluded by hypothesis: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
