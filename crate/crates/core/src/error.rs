use thiserror::Error;

use crate::simulate::PathSample;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("argument {name} = {value} outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("offspring law is not supercritical (m = {mean})")]
    NotSupercritical { mean: f64 },

    #[error("population cap {cap} exceeded at generation {}", .partial.counts.len() - 1)]
    PopulationCap { cap: u64, partial: Box<PathSample> },

    #[error("model is degenerate: {0}")]
    Degenerate(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("iteration depth {needed} exceeds cap {cap}")]
    DepthCap { needed: u32, cap: u32 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{0}")]
    Numerical(String),
}
