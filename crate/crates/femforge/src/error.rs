use thiserror::Error;

/// Errors produced by the solver kernel.
#[derive(Debug, Error)]
pub enum FemError {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("element {element}: degenerate geometry (det J = {det_j:.6e})")]
    DegenerateElement { element: usize, det_j: f64 },

    #[error("assembly error: no pattern entry at ({row}, {col})")]
    MissingPatternEntry { row: usize, col: usize },

    #[error("conflicting constraints on dof {dof}: {a} vs {b}")]
    ConflictingConstraint { dof: usize, a: f64, b: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("material error: {0}")]
    Material(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, FemError>;
