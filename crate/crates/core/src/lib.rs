//! Competitive-equilibrium pricing for networks of linear dynamic agents that
//! share a scarce resource, plus the "social shaping" machinery that bounds
//! agents' utility parameters so the clearing price stays affordable.
//!
//! The crate is organized around a small set of pure functions:
//!
//! - [`model`]: domain types, rollouts, welfare evaluation, trading
//!   reconstruction, and equilibrium verification.
//! - [`riccati`]: price-dependent finite-horizon Riccati recursions, per-agent
//!   best responses, and the discrete algebraic Riccati equation.
//! - [`solver`]: the dual price iteration and an independent primal oracle.
//! - [`shaping`]: analytic parameter bounds, the worst-case price map, and the
//!   bisection search for the largest safe parameter box.
//! - [`infinite`]: invariant-set analysis and zero-price certificates over an
//!   infinite horizon.
//! - [`tracking`]: reduction of reference-tracking problems to regulation form.
//!
//! All types are immutable after construction and all operations are pure, so
//! everything here is safe to call concurrently.

pub mod error;
pub mod infinite;
pub mod model;
pub mod riccati;
pub mod shaping;
pub mod solver;
pub mod tracking;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
