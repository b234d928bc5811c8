//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Failure modes surfaced by core operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    Shape(String),
    /// A value left the finite range (NaN or infinity), or an operation
    /// would produce one (e.g. softmax over an all-masked row).
    NonFinite(String),
    /// Invalid configuration (dimensions, variant names, generation params).
    Config(String),
    /// Environment contract violation (acting after done, bad start pose,
    /// unsatisfiable layout generation).
    Env(String),
    /// Unknown class id, empty record list, and similar input errors.
    Input(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Env(m) => write!(f, "environment error: {m}"),
            Error::Input(m) => write!(f, "input error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
