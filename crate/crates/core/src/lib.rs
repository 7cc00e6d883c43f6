//! Continual learning through modular embedding recomposition.
//!
//! The crate trains one low-rank textual expert per seen class against
//! diffusion-generated replay embeddings, stores the experts in a growing
//! foundational hub, and forges classifiers for unseen classes at inference
//! time by retrieving the most text-similar experts, merging their task
//! vectors with softmax affinity weights, and smoothing the merged weights
//! toward the frozen encoder.
//!
//! Modules:
//! - [`numerics`]: tensors, reverse-mode gradient tape, AdamW, seeded RNG.
//! - [`encoder`]: frozen reference text encoder, prompts, low-rank adapters,
//!   task-vector algebra.
//! - [`replay`]: per-task class-conditioned diffusion generators and the
//!   balanced synthetic dataset they produce.
//! - [`experts`]: sigmoid-loss textual alignment with memory-efficient
//!   expert batching.
//! - [`hub`]: the expert store, top-K retrieval, weight merging,
//!   alpha-smoothing, and seen/unseen classification.
//! - [`bench`]: synthetic worlds, incremental streams, the end-to-end
//!   pipeline, and evaluation metrics.

pub mod bench;
pub(crate) mod container;
pub mod encoder;
pub mod error;
pub mod experts;
pub mod hub;
pub mod ids;
pub mod numerics;
pub mod replay;

pub use error::{Error, Result};
pub use ids::{ClassId, TaskId};
