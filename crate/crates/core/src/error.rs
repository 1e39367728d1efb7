use thiserror::Error;

use crate::model::expr::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not match, or a matrix that must be
    /// symmetric is not.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid uncertainty set: {0}")]
    InvalidSet(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    /// A coefficient evaluated to NaN or infinity.
    #[error("non-finite value of `{what}` at x = {x:?}")]
    Evaluation { what: String, x: Vec<f64> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence at step {step}, index {index}: {detail}")]
    Divergence { step: usize, index: usize, detail: String },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Iteration { iterations: usize, residual: f64 },

    #[error("vanishing-discount sequence not Cauchy after {halvings} halvings (last gap {gap:e})")]
    Convergence { halvings: usize, gap: f64 },

    #[error("path {path} left the solution grid at t = {t} (x = {x:?})")]
    Coverage { path: usize, t: f64, x: Vec<f64> },

    #[error("range error: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
