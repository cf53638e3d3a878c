//! Simulation engine for hypothesis testing with continuously monitored
//! quantum systems.
//!
//! The crate builds measurement records from a true model, runs a pair of
//! unnormalized conditional-state filters in parallel over each record, and
//! accumulates the log-likelihood ratio between the two hypotheses. Binary
//! decisions, error-rate estimates, and Chernoff-style exponential bounds
//! are layered on top.
//!
//! Module map:
//! - [`operators`]: truncated Fock-space operators and Lindblad generators.
//! - [`trajectories`]: measurement-record containers, record simulation,
//!   and coarsening for step-size studies.
//! - [`filters`]: unnormalized filters for diffusive and counting records,
//!   discrete single-step reference maps, a hybrid quantum-classical
//!   filter, and a classical grid filter for comparison studies.
//! - [`likelihood`]: log-likelihood-ratio accumulation and decisions.
//! - [`gaussian_models`]: Kalman-Bucy filters, Riccati integration, and
//!   Chernoff exponents for linear-Gaussian models.
//! - [`scenarios`]: end-to-end Monte Carlo studies with reproducible
//!   seeding and summary statistics.
//! - [`verify`]: self-check suite of analytic identities, runnable from
//!   the command line.

pub mod error;
pub mod filters;
pub mod gaussian_models;
pub mod likelihood;
pub mod linalg;
pub mod operators;
pub mod rng;
pub mod scenarios;
pub mod trajectories;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
