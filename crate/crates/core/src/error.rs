use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("support mismatch: {left} vs {right} symbols")]
    SupportMismatch { left: usize, right: usize },

    #[error("absolute continuity violated at symbol {symbol}: p = {p}, q = 0")]
    NotAbsolutelyContinuous { symbol: usize, p: f64 },

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("channel violates the no-free-passive-sensing assumption: P^0_1 != P^0_0 at y = {symbol}")]
    FreePassiveSensing { symbol: usize },

    #[error("channel violates the non-zero, finite active sensing gain assumption: D = {0}")]
    NoActiveGain(f64),

    #[error("channel violates Eve's hiding assumption for theta = {theta}: {reason}")]
    EveHiding { theta: usize, reason: String },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid symbol index {index} for alphabet of size {size}")]
    InvalidSymbol { index: usize, size: usize },

    #[error("bound is vacuous: |ln alpha| = {abs_ln_alpha} <= d/rho = {c1}")]
    VacuousBound { abs_ln_alpha: f64, c1: f64 },

    #[error("enumeration infeasible: {paths} paths exceed the limit of {limit}")]
    EnumerationTooLarge { paths: u128, limit: u128 },

    #[error("policy not supported here: {0}")]
    UnsupportedPolicy(&'static str),

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
