//! Denoising-diffusion replay: per-task generators over embedding space and
//! the balanced synthetic dataset experts train on.

pub mod dsyn;
pub mod generator;
pub mod schedule;

pub use dsyn::{build_synthetic_dataset, dsyn_class_seed, SyntheticDataset};
pub use generator::{
    q_sample, time_embedding, train_generator, DiffusionGenerator, GeneratorConfig,
    GeneratorTraining,
};
pub use schedule::{NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_STEPS};
