//! Error type shared by every module of the crate.

use std::io;

use thiserror::Error;

use crate::observables::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid or inconsistent configuration; `field` names the offending key.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A state that does not have the structure an observable expects.
    #[error("diagnostic: {0}")]
    Diagnostic(String),

    /// Trace moved by more than the allowed amount between two samples.
    /// The trajectory recorded up to the abort is kept for the caller.
    #[error("trace drift {drift:.3e} at t = {time:.6e} s exceeds tolerance {tolerance:.1e}")]
    TraceDrift {
        time: f64,
        drift: f64,
        tolerance: f64,
        partial: Box<Trajectory>,
    },

    /// The coherence never entered the fit window.
    #[error("run too short: coherence stayed above {threshold} until t = {t_end:.6e} s; try n_steps >= {suggested_steps}")]
    RunTooShort {
        threshold: f64,
        t_end: f64,
        suggested_steps: usize,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}
