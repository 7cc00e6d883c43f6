//! Synthetic benchmark harness: worlds, incremental streams, the full
//! training/evaluation pipeline, metrics, and ablations.

pub mod ablate;
pub mod metrics;
pub mod pipeline;
pub mod stream;
pub mod world;

pub use ablate::{ablate, AblationAxis, AblationRow, AblationTable, AxisValues};
pub use metrics::{
    ci_transfer, faa, mtil_metrics, AccuracyMatrix, BaselineMetrics, MetricsReport, MtilMetrics,
};
pub use pipeline::{
    accuracy_over, config_hash, run_pipeline, seed_hash, AdapterConfig, EvalConfig,
    PipelineConfig, PipelineOutput, ReplayConfig,
};
pub use stream::{
    build_stream, sample_split, ClassOrder, Protocol, SplitData, StreamConfig, TaskSpec,
    TaskStream,
};
pub use world::{generate_world, SyntheticWorld, WorldClass, WorldConfig};
