use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cell {cell} has non-positive signed area {area:e}")]
    DegenerateCell { cell: usize, area: f64 },

    #[error("level set vanishes at vertex {vertex} ({x:e}, {y:e}) after snapping")]
    ZeroLevelSet { vertex: usize, x: f64, y: f64 },

    #[error("cell {cell} has no {side} part")]
    SideMismatch { cell: usize, side: &'static str },

    #[error("sparse Cholesky breakdown on a system of size {size}: {detail}")]
    Factorization { size: usize, detail: String },

    #[error("linear solve did not converge: residual {residual:e} > {tolerance:e}")]
    SolveAccuracy { residual: f64, tolerance: f64 },

    #[error("incompatible local system ({context}): residual {residual:e}, scale {scale:e}")]
    IncompatibleSystem {
        context: String,
        residual: f64,
        scale: f64,
    },

    #[error("singular cut-cell flux system on cell {cell}: {detail}")]
    SingularCutSystem { cell: usize, detail: String },

    #[error("{check} failed on iteration {iteration}: {value:e} > {bound:e}")]
    HardCheck {
        check: &'static str,
        iteration: usize,
        value: f64,
        bound: f64,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
