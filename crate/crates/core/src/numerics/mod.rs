//! Hand-written differentiable building blocks.
//!
//! There is no autodiff graph: each model composes these pieces and calls
//! their backward passes explicitly. All arithmetic is `f64`.

mod adam;
mod checkpoint;
mod embedding;
mod gradcheck;
mod mlp;

pub use adam::{Adam, Moments};
pub use checkpoint::{Checkpoint, Tensor};
pub use embedding::{EmbeddingTable, RowGrads};
pub use gradcheck::{grad_check, numerical_gradient, GradCheckReport};
pub use mlp::{Dense, DenseGrad, MlpCache, MlpGrads, MlpParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Logistic function, stable for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}
