use thiserror::Error;

use crate::pcg::PcgResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Local Newton solve hit its iteration cap. Carries the best iterate.
    #[error("local solve did not converge (gradient norm {grad_norm:e})")]
    LocalSolve { best: Vec<f64>, grad_norm: f64 },

    /// Inner CG for the preconditioner hit its iteration cap.
    #[error("inner CG did not converge after {iters} iterations (relative residual {rel_residual:e})")]
    InnerCg { iters: usize, rel_residual: f64 },

    /// Distributed PCG reached its iteration cap before the residual test
    /// passed. The partial result is kept for adaptive restarts.
    #[error("distributed PCG stopped at its iteration cap (residual {:e} > {:e})", .0.residual_norm, .0.eps)]
    PcgIterCap(Box<PcgResult>),

    #[error("matrix too large for dense diagnostic (d = {0})")]
    TooLarge(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
