//! Continual learning with key-query orthogonal projection and a
//! prototype-based one-versus-all head.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical kernel,
//! the expanding prompt pool, the frozen surrogate encoder with its heads and
//! analytic gradients, the prototype buffer, Adam, the per-task training
//! procedure and the evaluation metrics. File formats, data loading and the
//! experiment runner live in the `koppa` companion crate.
//!
//! Enable the `std` feature to get `std::error::Error` on the error types
//! through the standard library prelude (the crate itself never touches IO).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod buffer;
pub mod gradcheck;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod prompt;
pub mod subspace;
pub mod task;
pub mod trainer;

pub use buffer::{Prototype, PrototypeBuffer};
pub use linalg::{LinalgError, Matrix, SvdResult};
pub use metrics::AccuracyMatrix;
pub use model::{CeHead, Gradients, ModelDims, ModelState, OvaHead, ParamKey, SurrogateEncoder};
pub use optimizer::{Adam, AdamConfig, CosineSchedule};
pub use prompt::{AttentionMode, AttentionWeights, PromptBlock, PromptPool, Similarity};
pub use subspace::SubspaceBasis;
pub use task::TaskData;
pub use trainer::{LossWeights, TrainConfig, TrainError, Trainer, TrainingMode};
