use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NumericFault(String),
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("signal has zero power: {0}")]
    ZeroPower(String),
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("channel backpressure: {in_flight} messages in flight exceeds bound {bound}")]
    Backpressure { in_flight: usize, bound: usize },
    #[error("malformed wire payload: {0}")]
    Wire(String),
    #[error("causality violation at tick {tick}: {detail}")]
    Causality { tick: usize, detail: String },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
