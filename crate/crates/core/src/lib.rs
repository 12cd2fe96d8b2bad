//! Quantum Brownian motion of a free particle: closed-form decoherence and
//! relaxation timescales, and a grid solver for the high-temperature
//! Caldeira–Leggett master equation that measures them.

pub mod analytic;
pub mod cli;
pub mod config;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod master;
pub mod measurement;
pub mod observables;
pub mod state;

pub use error::{Error, Result};
