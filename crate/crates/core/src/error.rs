//! Error type shared by every module in the crate.

use thiserror::Error;

use crate::solver::DualTrace;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied data failed. The message names the
    /// violated check.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix factorization hit a non-positive-definite or nearly singular
    /// innovation term.
    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    /// The algebraic Riccati iteration did not converge; the pair (A, B) is
    /// likely not stabilizable (or the closed loop is not contractive).
    #[error("not stabilizable: {0}")]
    NonStabilizable(String),

    /// An iterative solver ran out of iterations. The dual solver attaches its
    /// iteration trace for post-mortems.
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        trace: Option<Box<DualTrace>>,
    },

    /// A truncated infinite-horizon solve never produced a quiet price tail.
    #[error("truncation failure: {0}")]
    Truncation(String),
}
