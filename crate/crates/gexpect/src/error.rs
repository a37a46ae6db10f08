//! Error type shared by every module in this crate.
//!
//! Numerical routines here fail loudly rather than degrade silently: a
//! tolerance that cannot be met, a sample set contaminated by overflow, or a
//! generator whose declared properties do not match its behaviour all surface
//! as distinct variants so that callers (and the CLI exit-code mapping) can
//! react to each condition specifically.

/// Crate-wide error enumeration.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A time was expected to coincide with a grid node but does not.
    /// Snapping to the grid is a separate, explicit operation.
    #[error("time {t} is not a grid node (nearest {nearest}, distance {distance:.3e})")]
    OffGridTime { t: f64, nearest: f64, distance: f64 },

    /// A requested allocation or sample count exceeds the configured budget.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// Monte Carlo samples contained non-finite values after a transform,
    /// typically signalling an integrability violation of the payoff.
    #[error("{bad} of {total} samples were non-finite")]
    NonFiniteSamples { bad: usize, total: usize },

    /// The operation requires structural properties the generator does not
    /// declare (for instance determinism or independence from `y`).
    #[error("unsupported generator: {0}")]
    UnsupportedGenerator(String),

    /// Refinement stopped at its cap with the residual still above target.
    #[error("tolerance not reached: achieved {achieved:.3e}, requested {requested:.3e}")]
    ToleranceNotReached { achieved: f64, requested: f64 },

    /// The supplied grid cannot resolve the requested quantity.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// Sampled behaviour of a generator contradicts its declared metadata.
    #[error("declared metadata violated: {0}")]
    MetadataViolation(String),

    /// An expectation oracle returned a value outside its contract.
    #[error("oracle contract violation: {0}")]
    OracleContractViolation(String),

    /// Fixed-point iteration failed to contract within the iteration cap.
    #[error("contraction failure: {0}")]
    ContractionFailure(String),

    /// A limiting procedure is converging, but too slowly to finish within
    /// the configured schedule.
    #[error("slow convergence: {0}")]
    SlowConvergence(String),

    /// Input data violate a structural precondition discovered mid-run,
    /// e.g. a path functional that is not a supermartingale.
    #[error("precondition violation: {0}")]
    PreconditionViolation(String),

    /// Two verdicts that a theorem forces to agree came out different.
    #[error("equivalence violation: {0}")]
    EquivalenceViolation(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
