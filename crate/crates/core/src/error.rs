use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged: particle {particle} has non-finite state")]
    Diverged { particle: usize },

    #[error("particle index {0} out of range")]
    InvalidParticle(usize),

    #[error("particle {0} is already attached")]
    AlreadyAttached(usize),

    #[error("particle {0} is not attached")]
    NotAttached(usize),

    #[error("invalid object counts ({n_rigid} rigid, {n_cloth} cloth)")]
    InvalidCounts { n_rigid: usize, n_cloth: usize },

    #[error("task infeasible: {0}")]
    TaskInfeasible(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),

    #[error("degenerate opening polygon: {0}")]
    DegeneratePolygon(String),

    #[error("opening perturbation could not reach IoU {target} (closest {achieved})")]
    PerturbationUnreachable { target: f64, achieved: f64 },

    #[error("no feasible lift pair: {0}")]
    NoLiftPair(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value function failed: {0}")]
    ValueFunction(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
