use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("community {0} has zero expected degree")]
    ZeroDegreeCommunity(usize),

    #[error("kernel row {row} sums to {sum}, not 1")]
    NonStochastic { row: usize, sum: f64 },

    #[error("second eigenvalue of the kernel is complex")]
    ComplexSpectrum,

    #[error("kernel is not reversible; eigen-decomposition for k = {0} needs a reversible chain")]
    NonReversibleKernel(usize),

    #[error("operation requires k = 2, got k = {0}")]
    WrongK(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("side-information parameter delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("tree has an empty flow boundary")]
    EmptyBoundary,

    #[error("no boundary node carries a prior label")]
    NoBoundaryLabels,

    #[error("resistance level must be positive and finite, got {0}")]
    InvalidResistance(f64),

    #[error("minimum energy diverges: branching factor times conductance is {0} <= 1")]
    DivergentEnergy(f64),

    #[error("kernel has theta = 0; messages carry no information")]
    ZeroTheta,

    #[error("weight vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("second eigenvector is unavailable for an asymmetric kernel with k = {0}")]
    MissingEigenvector(usize),

    #[error("f_update requires 0 < theta < 1, got ({0}, {1})")]
    DomainError(f64, f64),

    #[error("enumeration oracle supports at most {max} nodes, tree has {got}")]
    TooLarge { max: usize, got: usize },

    #[error("evaluation set is empty")]
    EmptyEvaluationSet,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("label file references unknown node {0}")]
    UnknownNode(String),

    #[error("{0} nodes have no label after attaching the label file")]
    MissingLabels(usize),

    #[error("graph has no ground-truth labels")]
    NoTruth,

    #[error(
        "dataset not found at {0}; download polblogs.gml (Adamic & Glance political blogs, \
         e.g. from Mark Newman's network data page) and pass --data or set WMP_DATA_DIR"
    )]
    DatasetMissing(PathBuf),

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
