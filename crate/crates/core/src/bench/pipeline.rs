//! End-to-end incremental run: per task, train a generator on the current
//! features, rebuild the synthetic dataset from every generator so far,
//! train (or retrain) the experts on it, sync them into the hub, and
//! evaluate the full accuracy matrix row. A frozen zero-shot baseline is
//! evaluated alongside from the same test sets.

use crate::bench::metrics::{
    ci_transfer, faa, mtil_metrics, AccuracyMatrix, BaselineMetrics, MetricsReport,
};
use crate::bench::stream::{sample_split, Protocol, SplitData, TaskStream};
use crate::bench::world::SyntheticWorld;
use crate::encoder::adapter::AdapterVariant;
use crate::encoder::prompt::{ClassPrompt, TemplateLibrary};
use crate::encoder::reference::{EncoderConfig, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::experts::train::{train_task_experts, ExpertSet, TrainConfig, TrainingLog};
use crate::hub::{FoundationalHub, ForgeConfig, MergeReport, PrototypeTable, UnseenClass};
use crate::ids::{ClassId, TaskId};
use crate::numerics::rng::{derive_seed, fnv1a64};
use crate::numerics::tensor::EmbeddingVector;
use crate::replay::dsyn::build_synthetic_dataset;
use crate::replay::generator::{train_generator, DiffusionGenerator, GeneratorConfig};
use crate::replay::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Adapter family and rank shared by every expert of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub variant: AdapterVariant,
    pub rank: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            variant: AdapterVariant::Lora,
            rank: 16,
        }
    }
}

/// Replay-phase configuration: schedule, generator, and dataset sizing.
///
/// The pipeline defaults use a narrower generator and fewer samples than the
/// standalone defaults so a full multi-seed run fits a desk-scale budget;
/// both are freely configurable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub schedule_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub generator: GeneratorConfig,
    pub per_class: usize,
    pub batch: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            schedule_steps: 100,
            beta_min: 1e-4,
            beta_max: 2e-2,
            generator: GeneratorConfig {
                layers: 5,
                hidden: 96,
                iters: 700,
                ..GeneratorConfig::default()
            },
            per_class: 150,
            batch: 64,
        }
    }
}

/// Evaluation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Smoothing applied to seen-class prototypes (1.0 keeps experts at
    /// full strength).
    pub alpha_seen: f64,
    /// Reproduce the printed transfer bound (sum through the exposure
    /// checkpoint) instead of the pre-exposure default.
    pub mtil_transfer_inclusive: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha_seen: 1.0,
            mtil_transfer_inclusive: false,
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub replay: ReplayConfig,
    pub experts: TrainConfig,
    pub forge: ForgeConfig,
    pub eval: EvalConfig,
    /// Mix the current task's real features into the expert training pool.
    pub mix_real_current: bool,
    pub master_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderConfig::default(),
            adapter: AdapterConfig::default(),
            replay: ReplayConfig::default(),
            experts: TrainConfig::default(),
            forge: ForgeConfig::default(),
            eval: EvalConfig::default(),
            mix_real_current: false,
            master_seed: 1992,
        }
    }
}

/// Canonical content hash of any serializable config: serialize to JSON
/// (object keys are sorted), then FNV-1a. Key order in the source text
/// cannot affect it.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("canonical json");
    format!("{:016x}", fnv1a64(canonical.as_bytes()))
}

/// Artifacts of one pipeline run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub hub: FoundationalHub,
    pub matrix: AccuracyMatrix,
    pub zero_shot_matrix: AccuracyMatrix,
    pub report: MetricsReport,
    /// Per-task generator loss curves.
    pub generator_losses: Vec<Vec<f64>>,
    /// Per-task expert-training logs.
    pub expert_logs: Vec<TrainingLog>,
    /// Merge reports collected during evaluation, tagged by checkpoint.
    pub merge_reports: Vec<(usize, MergeReport)>,
}

fn unseen_with_names(
    world: &SyntheticWorld,
    classes: &[ClassId],
) -> Result<Vec<UnseenClass>> {
    classes
        .iter()
        .map(|&id| {
            world.name(id).map(|n| UnseenClass {
                id,
                name: n.to_string(),
            })
        })
        .collect()
}

/// Accuracy of a prototype table on a test set, optionally restricted to a
/// candidate subset (task-incremental scoring).
pub fn accuracy_over(
    table: &PrototypeTable,
    samples: &[(EmbeddingVector, ClassId)],
    restrict: Option<&[ClassId]>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let table = match restrict {
        Some(classes) => table.restricted(classes)?,
        None => table.clone(),
    };
    let mut correct = 0usize;
    for (z, label) in samples {
        if table.score(z)?.top().0 == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn evaluate_row(
    table: &PrototypeTable,
    stream: &TaskStream,
    split: &SplitData,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(stream.num_tasks());
    for (i, task) in stream.tasks.iter().enumerate() {
        let restrict = match stream.protocol {
            Protocol::ClassIl => None,
            Protocol::Mtil => Some(task.classes.as_slice()),
        };
        row.push(accuracy_over(table, &split.test[i], restrict)?);
    }
    Ok(row)
}

/// Zero-shot prototypes for every class of the stream.
fn zero_shot_table(
    encoder: &ReferenceEncoder,
    world: &SyntheticWorld,
    stream: &TaskStream,
) -> Result<PrototypeTable> {
    let mut entries = Vec::new();
    for class in stream.all_classes() {
        let prompt = ClassPrompt::canonical(class, world.name(class)?.to_string());
        entries.push((class, encoder.zero_shot(&prompt)?));
    }
    Ok(PrototypeTable::from_entries(entries))
}

fn metrics_for(
    matrix: &AccuracyMatrix,
    protocol: Protocol,
    inclusive: bool,
) -> Result<(f64, Option<f64>, Option<crate::bench::metrics::MtilMetrics>)> {
    let f = faa(matrix)?;
    let ci = match protocol {
        Protocol::ClassIl if matrix.size() >= 2 => Some(ci_transfer(matrix)?),
        _ => None,
    };
    let mt = match protocol {
        Protocol::Mtil if matrix.size() >= 2 => Some(mtil_metrics(matrix, inclusive)?),
        _ => None,
    };
    Ok((f, ci, mt))
}

/// Run the full incremental pipeline over a world and stream.
pub fn run_pipeline(
    world: &SyntheticWorld,
    stream: &TaskStream,
    cfg: &PipelineConfig,
    templates: &TemplateLibrary,
) -> Result<PipelineOutput> {
    let encoder = Arc::new(ReferenceEncoder::new(cfg.encoder.clone())?);
    if encoder.fingerprint() != world.encoder_fingerprint() {
        return Err(Error::contract(
            "world was generated with a different encoder".to_string(),
        ));
    }
    cfg.forge.validate()?;
    if !(0.0..=1.0).contains(&cfg.eval.alpha_seen) {
        return Err(Error::contract("alpha_seen outside [0, 1]"));
    }
    let t_count = stream.num_tasks();
    if t_count == 0 {
        return Err(Error::contract("stream has no tasks"));
    }

    let master = cfg.master_seed;
    let split = sample_split(world, stream, derive_seed(master, "split", 0))?;
    let schedule = NoiseSchedule::linear(
        cfg.replay.schedule_steps,
        cfg.replay.beta_min,
        cfg.replay.beta_max,
    )?;
    let hub_seed = derive_seed(master, "hub", 0);
    let mut experts = ExpertSet::new(
        encoder.clone(),
        cfg.adapter.variant,
        cfg.adapter.rank,
        hub_seed,
    )?;
    let mut hub = FoundationalHub::new(&encoder, cfg.adapter.variant, cfg.adapter.rank, hub_seed)?;

    let mut matrix = AccuracyMatrix::new(t_count)?;
    let mut zero_shot_matrix = AccuracyMatrix::new(t_count)?;
    let zs_table = zero_shot_table(&encoder, world, stream)?;
    let zs_row = evaluate_row(&zs_table, stream, &split)?;
    for t in 0..t_count {
        for (i, &acc) in zs_row.iter().enumerate() {
            zero_shot_matrix.set(t, i, acc)?;
        }
    }

    let mut generators: Vec<DiffusionGenerator> = Vec::with_capacity(t_count);
    let mut generator_losses = Vec::with_capacity(t_count);
    let mut expert_logs = Vec::with_capacity(t_count);
    let mut merge_reports = Vec::new();

    for (t, task) in stream.tasks.iter().enumerate() {
        // Replay: a fresh generator for this task's features.
        let training = train_generator(
            &split.train[t],
            &schedule,
            derive_seed(master, "generator", t as u64),
            &cfg.replay.generator,
            TaskId(t as u32),
        )?;
        generator_losses.push(training.losses);
        generators.push(training.generator);

        let mut dsyn = build_synthetic_dataset(
            &generators,
            cfg.replay.per_class,
            cfg.replay.batch,
            derive_seed(master, "dsyn", t as u64),
        )?;
        if cfg.mix_real_current {
            dsyn.augment_with_real(&split.train[t]);
        }

        // Textual alignment over every seen class.
        for &class in &task.classes {
            experts.ensure_expert(class, world.name(class)?, TaskId(t as u32));
        }
        let expert_cfg = TrainConfig {
            seed: derive_seed(master, "experts", t as u64),
            ..cfg.experts.clone()
        };
        let log = train_task_experts(&mut experts, &dsyn, &expert_cfg, TaskId(t as u32), templates)?;
        expert_logs.push(log);

        // Sync trained adapters into the hub.
        let mut updates: Vec<(ClassId, String, TaskId)> = Vec::new();
        for (&class, entry) in experts.entries() {
            updates.push((class, entry.name.clone(), entry.created_task));
        }
        for (class, name, created) in updates {
            let adapter = experts.entry(class).unwrap().adapter.clone();
            if hub.contains(class) {
                hub.update_adapter(class, adapter)?;
            } else {
                hub.insert(class, &name, adapter, &encoder, created)?;
            }
        }

        // Evaluate the full row at this checkpoint.
        let seen = stream.seen_classes(t);
        let unseen = unseen_with_names(world, &stream.unseen_classes(t))?;
        let mut entries = Vec::with_capacity(seen.len() + unseen.len());
        for &class in &seen {
            entries.push((class, hub.seen_prototype(&encoder, class, cfg.eval.alpha_seen)?));
        }
        for u in &unseen {
            let (proto, report) = hub.forge(&encoder, &u.name, &cfg.forge)?;
            merge_reports.push((t, report));
            entries.push((u.id, proto));
        }
        let table = PrototypeTable::from_entries(entries);
        let row = evaluate_row(&table, stream, &split)?;
        for (i, &acc) in row.iter().enumerate() {
            matrix.set(t, i, acc)?;
        }
    }

    let protocol = stream.protocol;
    let (f, ci, mt) = metrics_for(&matrix, protocol, cfg.eval.mtil_transfer_inclusive)?;
    let (zf, zci, zmt) = metrics_for(&zero_shot_matrix, protocol, cfg.eval.mtil_transfer_inclusive)?;
    let per_task_last: Vec<f64> = (0..t_count)
        .map(|i| matrix.get(t_count - 1, i).unwrap())
        .collect();
    let report = MetricsReport {
        protocol: match protocol {
            Protocol::ClassIl => "class_il".to_string(),
            Protocol::Mtil => "mtil".to_string(),
        },
        num_tasks: t_count,
        faa: f,
        ci_transfer: ci,
        mtil: mt,
        per_task_last,
        zero_shot: BaselineMetrics {
            faa: zf,
            ci_transfer: zci,
            mtil: zmt,
        },
        config_hash: config_hash(cfg),
        master_seed: master,
    };

    Ok(PipelineOutput {
        hub,
        matrix,
        zero_shot_matrix,
        report,
        generator_losses,
        expert_logs,
        merge_reports,
    })
}

/// Seed-affecting fields of a config, hashed; ablation rows must share this.
pub fn seed_hash(cfg: &PipelineConfig) -> String {
    let seeds = BTreeMap::from([
        ("master_seed", cfg.master_seed),
        ("encoder_seed", cfg.encoder.seed),
    ]);
    config_hash(&seeds)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::bench::stream::{build_stream, ClassOrder, StreamConfig};
    use crate::bench::world::{generate_world, WorldConfig};
    use crate::numerics::tensor::{l2_normalize, Tensor1D};

    pub(crate) fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            encoder: EncoderConfig {
                seed: 3,
                vocab: 128,
                d_tok: 8,
                hidden: 16,
                d_out: 12,
                adapted_layers: vec![0, 1],
            },
            adapter: AdapterConfig {
                variant: AdapterVariant::Lora,
                rank: 4,
            },
            replay: ReplayConfig {
                schedule_steps: 10,
                generator: GeneratorConfig {
                    layers: 3,
                    hidden: 24,
                    iters: 40,
                    batch: 16,
                    ..GeneratorConfig::default()
                },
                per_class: 20,
                batch: 16,
                ..ReplayConfig::default()
            },
            experts: TrainConfig {
                iterations: 30,
                data_batch: 16,
                expert_batch: 3,
                ..TrainConfig::default()
            },
            forge: ForgeConfig {
                k: 2,
                ..ForgeConfig::default()
            },
            eval: EvalConfig::default(),
            mix_real_current: false,
            master_seed: 7,
        }
    }

    fn tiny_world(cfg: &PipelineConfig, families: usize, per_family: usize) -> SyntheticWorld {
        let enc = ReferenceEncoder::new(cfg.encoder.clone()).unwrap();
        generate_world(
            &WorldConfig {
                families,
                classes_per_family: per_family,
                ..WorldConfig::default()
            },
            &enc,
        )
        .unwrap()
    }

    #[test]
    fn single_task_run_produces_one_by_one_matrix() {
        let cfg = tiny_config();
        let world = tiny_world(&cfg, 2, 2);
        let stream = build_stream(
            &world,
            &StreamConfig {
                tasks: 1,
                classes_per_task: 3,
                train_per_class: 12,
                test_per_class: 8,
                ..StreamConfig::default()
            },
            cfg.master_seed,
        )
        .unwrap();
        let out = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        assert_eq!(out.matrix.size(), 1);
        assert!(out.report.ci_transfer.is_none());
        assert_eq!(out.report.faa, out.matrix.get(0, 0).unwrap());
        assert_eq!(out.hub.len(), 3);
    }

    #[test]
    fn alpha_zero_everywhere_reproduces_the_zero_shot_matrix() {
        let mut cfg = tiny_config();
        cfg.forge.alpha = 0.0;
        cfg.eval.alpha_seen = 0.0;
        let world = tiny_world(&cfg, 2, 2);
        let stream = build_stream(
            &world,
            &StreamConfig {
                tasks: 2,
                classes_per_task: 2,
                train_per_class: 12,
                test_per_class: 8,
                ..StreamConfig::default()
            },
            cfg.master_seed,
        )
        .unwrap();
        let out = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        for t in 0..2 {
            for i in 0..2 {
                assert_eq!(
                    out.matrix.get(t, i).unwrap(),
                    out.zero_shot_matrix.get(t, i).unwrap(),
                    "entry ({t}, {i})"
                );
            }
        }
    }

    #[test]
    fn hub_grows_monotonically_with_non_decreasing_task_ids() {
        let cfg = tiny_config();
        let world = tiny_world(&cfg, 2, 2);
        let stream = build_stream(
            &world,
            &StreamConfig {
                tasks: 2,
                classes_per_task: 2,
                train_per_class: 10,
                test_per_class: 6,
                order: ClassOrder::Interleaved,
                ..StreamConfig::default()
            },
            cfg.master_seed,
        )
        .unwrap();
        let out = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        assert_eq!(out.hub.len(), 4);
        let tasks: Vec<u32> = out.hub.entries().iter().map(|e| e.created_task.0).collect();
        for w in tasks.windows(2) {
            assert!(w[0] <= w[1], "creation tasks decrease: {tasks:?}");
        }
    }

    #[test]
    fn same_config_same_report() {
        let cfg = tiny_config();
        let world = tiny_world(&cfg, 2, 2);
        let stream = build_stream(
            &world,
            &StreamConfig {
                tasks: 2,
                classes_per_task: 2,
                train_per_class: 10,
                test_per_class: 6,
                ..StreamConfig::default()
            },
            cfg.master_seed,
        )
        .unwrap();
        let a = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        let b = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn zero_shot_rows_are_constant_across_checkpoints() {
        let cfg = tiny_config();
        let world = tiny_world(&cfg, 2, 2);
        let stream = build_stream(
            &world,
            &StreamConfig {
                tasks: 2,
                classes_per_task: 2,
                train_per_class: 10,
                test_per_class: 6,
                ..StreamConfig::default()
            },
            cfg.master_seed,
        )
        .unwrap();
        let out = run_pipeline(&world, &stream, &cfg, &TemplateLibrary::builtin()).unwrap();
        for i in 0..2 {
            assert_eq!(
                out.zero_shot_matrix.get(0, i),
                out.zero_shot_matrix.get(1, i)
            );
        }
    }

    #[test]
    fn protocol_separation_restricts_candidates() {
        // A prototype table where an out-of-task class matches the sample
        // perfectly: class-incremental scoring picks it, task-restricted
        // scoring cannot.
        let d = 6;
        let mut perfect = vec![0.0; d];
        perfect[0] = 1.0;
        let sample = l2_normalize(&Tensor1D::from_vec(perfect.clone()).unwrap()).unwrap();
        let mut near = vec![0.1; d];
        near[1] = 1.0;
        let near = l2_normalize(&Tensor1D::from_vec(near).unwrap()).unwrap();
        let table = PrototypeTable::from_entries(vec![
            (ClassId(0), near),
            (ClassId(9), sample.clone()),
        ]);
        let samples = vec![(sample, ClassId(0))];
        let unrestricted = accuracy_over(&table, &samples, None).unwrap();
        let restricted = accuracy_over(&table, &samples, Some(&[ClassId(0)])).unwrap();
        assert_eq!(unrestricted, 0.0);
        assert_eq!(restricted, 1.0);
    }

    #[test]
    fn config_hash_ignores_key_order_and_tracks_content() {
        let cfg = tiny_config();
        let h1 = config_hash(&cfg);
        let mut cfg2 = cfg.clone();
        assert_eq!(h1, config_hash(&cfg2));
        cfg2.master_seed += 1;
        assert_ne!(h1, config_hash(&cfg2));
    }
}
