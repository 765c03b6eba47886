use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("Gram matrix of element {elem} is not positive definite (pivot {pivot}, value {value:e})")]
    GramDegenerate { elem: usize, pivot: usize, value: f64 },
    #[error("global stiffness factorization failed: {0}")]
    Factorization(#[from] blocksparse::FactorError),
    #[error("linear solve residual {residual:e} exceeds tolerance {tol:e}")]
    SolveAccuracy { residual: f64, tol: f64 },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("mesh format error at line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
