use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no convergence by t = {t:.3}: residual Frobenius norm {residual:.3e}")]
    Convergence { residual: f64, t: f64 },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("{which} is singular or ill-conditioned (condition number {cond:.3e})")]
    Singular { which: String, cond: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
