//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} references undeclared vertex {vertex}")]
    DanglingEndpoint { edge: usize, vertex: usize },

    #[error("edge {edge} has non-positive or non-finite length {length}")]
    BadEdgeLength { edge: usize, length: f64 },

    #[error("duplicate id {0} in graph definition")]
    DuplicateId(usize),

    #[error("graph is not connected")]
    Disconnected,

    #[error("unknown edge id {0}")]
    UnknownEdge(usize),

    #[error("location t = {t} outside [0, {len}] on edge {edge}")]
    InvalidLocation { edge: usize, t: f64, len: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("graph contains loops; split them first (alpha = 2 assembly requires distinct edge endpoints)")]
    LoopsNotSplit,

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("singular system ({0})")]
    Singular(&'static str),

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("optimizer did not converge")]
    NonConvergence,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
