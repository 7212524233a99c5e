use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(
        "no connected random geometric graph with {agents} agents at radius {radius} after {attempts} draws; the radius is too small"
    )]
    Disconnected {
        agents: usize,
        radius: f64,
        attempts: usize,
    },

    #[error("combination matrix is not primitive: mixing rate {0} is not below 1")]
    NotMixing(f64),

    #[error("run diverged at iteration {iteration}: weight norm {norm:e}")]
    Diverged { iteration: usize, norm: f64 },

    #[error(
        "reference solver stopped after {iterations} iterations with gradient norm {grad_norm:e}; raise the regularization or the iteration cap"
    )]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
