//! Left-tail asymptotics of the martingale limits of supercritical
//! Galton–Watson processes with and without immigration.
//!
//! The crate classifies an offspring/immigration pair into its tail regime,
//! simulates the normalized limits, computes their Laplace transforms by the
//! Poincaré functional equation, and estimates tail rates from samples.

pub mod asymptotics;
pub mod distributions;
pub mod error;
pub mod estimate;
pub mod laplace;
pub mod parallel;
pub mod regression;
pub mod simulate;

pub use asymptotics::{classify, Regime, RegimeReport, TailShape, Variant};
pub use distributions::{ImmigrationSpec, OffspringSpec, Pmf};
pub use error::{Error, Result};
pub use parallel::Execution;
pub use simulate::{DrawMode, SimConfig};
