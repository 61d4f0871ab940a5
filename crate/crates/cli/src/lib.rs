//! Experiment driver for the model-adaptive solvers in `mutn-core`.
//!
//! The binary wraps four commands: dataset generation, training,
//! evaluation and reproduction of the desk-scale experiments. Every CSV it
//! writes starts with a `#` header block naming the tool version, the
//! config hash and the seed, followed by the config echo.

pub mod commands;
pub mod data;
pub mod desk;
pub mod output;
pub mod plot;
pub mod reproduce;

use std::fmt;
use std::io;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad config, arguments or missing files (exit code 1).
    Config(String),
    /// A numerical guard fired (exit code 2).
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical abort: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<mutn_core::Error> for Failure {
    fn from(e: mutn_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;
