//! Minimal dense numeric core: tensors, a gradient tape, small MLPs, AdamW,
//! and deterministic random streams.

pub mod graph;
pub mod mlp;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;

pub use graph::{Activation, Gradients, Graph, NodeId, ParamBinding, Value};
pub use mlp::{forward_mlp, forward_mlp_batch, forward_mlp_on_graph, MlpSpec};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use param::{Param, ParamSet, TensorValue};
pub use rng::{derive_seed, fnv1a64, SeededRng};
pub use tensor::{cosine_sim, l2_normalize, softmax, EmbeddingVector, Tensor1D, Tensor2D};
