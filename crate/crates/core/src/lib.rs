//! Deconfounded collaborative filtering through front-door adjustment.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`data`] loads interaction logs and item feature vectors and splits them
//!   (RAND and SKEW strategies).
//! * [`synthgen`] builds confounded synthetic worlds and samples datasets from them.
//! * [`causal`] is a small discrete-SCM bed for checking back-door and
//!   front-door adjustment against an interventional oracle.
//! * [`numerics`] holds the hand-written differentiable pieces (embeddings,
//!   ReLU MLP, Adam, gradient checking, checkpoints).
//! * [`exposure`] learns exposure weights `P(v|u)`.
//! * [`model`] is the front-door preference estimator, its ablations and the
//!   BPR matrix-factorisation baseline.
//! * [`eval`] ranks candidates under the real-plus-N protocol and computes
//!   nDCG/Recall/Precision at K.
//! * [`experiment`] ties the stages together behind a serialisable manifest.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every loop runs sequentially and produces identical output.

pub mod causal;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod exposure;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use exec::Execution;
