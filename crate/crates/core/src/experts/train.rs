//! Textual Alignment: training one adapter expert per seen class against the
//! synthetic replay dataset.
//!
//! Under the sigmoid loss every expert's gradient depends only on its own
//! similarity scores, so the per-step update can be split into arbitrary
//! batches of experts without changing the result. Cross-entropy couples the
//! experts through its partition function; with expert batching it degrades
//! to a per-batch softmax, which is exactly why it is the ablation baseline
//! and not the default.

use crate::encoder::adapter::{AdapterModule, AdapterSpace, AdapterVariant};
use crate::encoder::prompt::{ClassPrompt, PromptTemplate, TemplateLibrary};
use crate::encoder::reference::ReferenceEncoder;
use crate::error::{Error, Result};
use crate::ids::{ClassId, TaskId};
use crate::numerics::graph::Graph;
use crate::numerics::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::numerics::rng::{derive_seed, SeededRng};
use crate::numerics::tensor::{EmbeddingVector, Tensor1D, Tensor2D};
use crate::replay::dsyn::SyntheticDataset;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Which alignment loss drives expert training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sigmoid,
    CrossEntropy,
}

/// Expert-training hyperparameters. The optimizer is AdamW with zero decay
/// by default, matching plain Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub data_batch: usize,
    /// Number of experts updated per backward pass (clamped to the number
    /// of trained classes).
    pub expert_batch: usize,
    pub loss: LossKind,
    pub template_augmentation: bool,
    /// Softmax temperature for the cross-entropy variant.
    pub temperature: f64,
    pub seed: u64,
    /// Retrain previously seen classes' experts each task (fresh optimizer
    /// state); when false, old experts stay frozen after their task.
    pub retrain_old: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            iterations: 500,
            data_batch: 64,
            expert_batch: 8,
            loss: LossKind::Sigmoid,
            template_augmentation: true,
            temperature: 1.0,
            seed: 0,
            retrain_old: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::contract("weight decay must be non-negative"));
        }
        if self.data_batch == 0 || self.expert_batch == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::contract("temperature must be positive"));
        }
        Ok(())
    }
}

/// One expert: its adapter plus bookkeeping.
#[derive(Clone, Debug)]
pub struct ExpertEntry {
    pub name: String,
    pub adapter: AdapterModule,
    pub created_task: TaskId,
}

/// One adapter expert per seen class, sharing an encoder and adapter space.
#[derive(Clone, Debug)]
pub struct ExpertSet {
    encoder: Arc<ReferenceEncoder>,
    space: AdapterSpace,
    hub_seed: u64,
    entries: BTreeMap<ClassId, ExpertEntry>,
}

impl ExpertSet {
    pub fn new(
        encoder: Arc<ReferenceEncoder>,
        variant: AdapterVariant,
        rank: usize,
        hub_seed: u64,
    ) -> Result<Self> {
        let space = AdapterSpace::new(variant, rank, encoder.adapted_shapes(), hub_seed)?;
        Ok(ExpertSet {
            encoder,
            space,
            hub_seed,
            entries: BTreeMap::new(),
        })
    }

    pub fn encoder(&self) -> &ReferenceEncoder {
        &self.encoder
    }

    pub fn space(&self) -> &AdapterSpace {
        &self.space
    }

    pub fn hub_seed(&self) -> u64 {
        self.hub_seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.entries.keys().copied().collect()
    }

    pub fn entry(&self, class: ClassId) -> Option<&ExpertEntry> {
        self.entries.get(&class)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ClassId, &ExpertEntry)> {
        self.entries.iter()
    }

    /// Register a class if absent. New adapters initialize with a zero
    /// displacement (LoRA B = 0) from a seed derived from the hub seed and
    /// class id, so initialization does not depend on arrival order.
    pub fn ensure_expert(&mut self, class: ClassId, name: &str, task: TaskId) {
        self.entries.entry(class).or_insert_with(|| {
            let init_seed = derive_seed(self.hub_seed, "expert-init", class.0 as u64);
            ExpertEntry {
                name: name.to_string(),
                adapter: self.space.new_adapter(class, init_seed),
                created_task: task,
            }
        });
    }

    /// Prompt for a class under a given template.
    fn prompt(&self, class: ClassId, template: &PromptTemplate) -> Result<ClassPrompt> {
        let entry = self
            .entries
            .get(&class)
            .ok_or(Error::UnknownClass(class))?;
        Ok(ClassPrompt::new(class, entry.name.clone(), template.clone()))
    }

    /// Fraction of `data` classified correctly by full-strength experts
    /// (canonical prompts, alpha = 1).
    pub fn training_accuracy(&self, data: &[(EmbeddingVector, ClassId)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::contract("no data to score"));
        }
        let mut prototypes = Vec::new();
        for (&class, entry) in &self.entries {
            let tv = self.space.materialize(&entry.adapter)?;
            let prompt = ClassPrompt::canonical(class, entry.name.clone());
            prototypes.push((class, self.encoder.encode(&prompt, Some(&tv), 1.0)?));
        }
        let mut correct = 0;
        for (z, label) in data {
            let mut best = (f64::NEG_INFINITY, ClassId(u32::MAX));
            for (class, proto) in &prototypes {
                let s = z.cosine(proto)?;
                if s > best.0 {
                    best = (s, *class);
                }
            }
            if best.1 == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// One row of the training loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub expert_batch: usize,
    pub loss: f64,
}

/// Per-iteration loss log, one record per expert batch.
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub records: Vec<LossRecord>,
}

impl TrainingLog {
    /// CSV with an `iteration,expert_batch,loss` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,expert_batch,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.iteration, r.expert_batch, r.loss));
        }
        out
    }
}

/// Template used by `class` at `iteration`: deterministic in the seed and
/// independent of expert-batch partitioning.
fn draw_template(
    cfg: &TrainConfig,
    templates: &TemplateLibrary,
    iteration: usize,
    class: ClassId,
) -> PromptTemplate {
    if !cfg.template_augmentation {
        return PromptTemplate::canonical();
    }
    let key = ((iteration as u64) << 32) | class.0 as u64;
    let mut rng = SeededRng::new(derive_seed(cfg.seed, "template", key));
    templates.get(rng.below(templates.len())).clone()
}

/// The data batch drawn at `iteration` (indices into the dataset), shared by
/// every expert batch of that iteration.
fn draw_batch(cfg: &TrainConfig, dsyn_len: usize, iteration: usize) -> Vec<usize> {
    let mut rng = SeededRng::new(derive_seed(cfg.seed, "data-batch", iteration as u64));
    (0..cfg.data_batch).map(|_| rng.below(dsyn_len)).collect()
}

/// Gradient-and-update pass for one batch of experts on one data batch.
///
/// Only the subset's adapters change; under the sigmoid loss the result is
/// identical to a joint pass over all experts. Returns the mean per-sample
/// loss attributed to this subset.
pub fn apply_expert_batch(
    experts: &mut ExpertSet,
    subset: &[ClassId],
    batch: &[(EmbeddingVector, ClassId)],
    cfg: &TrainConfig,
    states: &mut BTreeMap<ClassId, AdamWState>,
    templates: &TemplateLibrary,
    iteration: usize,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let mut dedup = subset.to_vec();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != subset.len() {
        return Err(Error::contract("expert batch contains duplicate classes"));
    }
    for class in subset {
        if !experts.entries.contains_key(class) {
            return Err(Error::UnknownClass(*class));
        }
    }
    if batch.is_empty() {
        return Err(Error::contract("empty data batch"));
    }

    let dim = experts.encoder.dim();
    let mut zvis = Tensor2D::zeros(batch.len(), dim);
    for (r, (z, _)) in batch.iter().enumerate() {
        zvis.row_mut(r).copy_from_slice(z.as_slice());
    }

    match cfg.loss {
        LossKind::Sigmoid => {
            let mut total = 0.0;
            for &class in subset {
                let template = draw_template(cfg, templates, iteration, class);
                let prompt = experts.prompt(class, &template)?;
                let pooled = experts.encoder.pooled_input(&prompt.rendered()?)?;

                let entry = experts.entries.get(&class).unwrap();
                let mut graph = Graph::new();
                let (binding, deltas) = experts.space.stage_on_graph(&mut graph, &entry.adapter)?;
                let z_text = experts.encoder.stage_encode(&mut graph, &pooled, &deltas)?;
                let zvis_node = graph.matrix(zvis.clone());
                let sims = graph.mat_vec(zvis_node, z_text)?;
                let neg_y: Vec<f64> = batch
                    .iter()
                    .map(|(_, label)| if *label == class { -1.0 } else { 1.0 })
                    .collect();
                let signed = graph.vec_scale_elems(sims, Tensor1D::from_vec(neg_y)?)?;
                let sp = graph.vec_softplus(signed)?;
                let sum = graph.vec_sum(sp)?;
                let loss = graph.scalar_scale(sum, 1.0 / batch.len() as f64)?;

                let loss_value = graph.scalar_value(loss)?;
                if !loss_value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "expert {class} loss became {loss_value} at iteration {iteration}"
                    )));
                }
                total += loss_value;

                let grads = graph.backward(loss)?;
                let entry = experts.entries.get_mut(&class).unwrap();
                let param_grads = binding.param_grads(&grads, entry.adapter.params())?;
                let state = states
                    .get_mut(&class)
                    .ok_or_else(|| Error::contract(format!("no optimizer state for {class}")))?;
                adamw_step(entry.adapter.params_mut(), &param_grads, state)?;
            }
            Ok(total / subset.len() as f64)
        }
        LossKind::CrossEntropy => {
            // Naive subset decomposition: the softmax runs over only this
            // batch's experts (samples whose class falls outside contribute
            // just their log-partition term). Exact when the batch covers
            // every trained class, different otherwise.
            let mut graph = Graph::new();
            let mut bindings = Vec::with_capacity(subset.len());
            let mut sims = Vec::with_capacity(subset.len());
            for &class in subset {
                let template = draw_template(cfg, templates, iteration, class);
                let prompt = experts.prompt(class, &template)?;
                let pooled = experts.encoder.pooled_input(&prompt.rendered()?)?;
                let entry = experts.entries.get(&class).unwrap();
                let (binding, deltas) = experts.space.stage_on_graph(&mut graph, &entry.adapter)?;
                let z_text = experts.encoder.stage_encode(&mut graph, &pooled, &deltas)?;
                let zvis_node = graph.matrix(zvis.clone());
                sims.push(graph.mat_vec(zvis_node, z_text)?);
                bindings.push((class, binding));
            }
            let targets: Vec<Option<usize>> = batch
                .iter()
                .map(|(_, label)| subset.iter().position(|c| c == label))
                .collect();
            let loss = graph.batch_cross_entropy(sims, targets, cfg.temperature)?;
            let loss_value = graph.scalar_value(loss)?;
            if !loss_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "cross-entropy loss became {loss_value} at iteration {iteration}"
                )));
            }
            let grads = graph.backward(loss)?;
            for (class, binding) in bindings {
                let entry = experts.entries.get_mut(&class).unwrap();
                let param_grads = binding.param_grads(&grads, entry.adapter.params())?;
                let state = states
                    .get_mut(&class)
                    .ok_or_else(|| Error::contract(format!("no optimizer state for {class}")))?;
                adamw_step(entry.adapter.params_mut(), &param_grads, state)?;
            }
            Ok(loss_value)
        }
    }
}

/// Train every expert for `cfg.iterations` steps against the synthetic
/// dataset. New classes must already be registered via
/// [`ExpertSet::ensure_expert`]; a dataset class without an expert is a
/// contract violation.
pub fn train_task_experts(
    experts: &mut ExpertSet,
    dsyn: &SyntheticDataset,
    cfg: &TrainConfig,
    current_task: TaskId,
    templates: &TemplateLibrary,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let classes = dsyn.class_ids();
    for class in &classes {
        if !experts.entries.contains_key(class) {
            return Err(Error::contract(format!(
                "dataset class {class} has no expert"
            )));
        }
    }

    let trained: Vec<ClassId> = classes
        .iter()
        .copied()
        .filter(|c| cfg.retrain_old || experts.entries[c].created_task == current_task)
        .collect();
    let mut log = TrainingLog::default();
    if trained.is_empty() || cfg.iterations == 0 {
        return Ok(log);
    }

    // Fresh optimizer state per expert per task.
    let mut states: BTreeMap<ClassId, AdamWState> = trained
        .iter()
        .map(|&c| {
            AdamWState::new(AdamWConfig::new(cfg.lr, cfg.weight_decay)).map(|s| (c, s))
        })
        .collect::<Result<_>>()?;

    let chunk = cfg.expert_batch.min(trained.len());
    let partition: Vec<&[ClassId]> = trained.chunks(chunk).collect();
    check_disjoint(&partition)?;

    for iteration in 0..cfg.iterations {
        let indices = draw_batch(cfg, dsyn.len(), iteration);
        let batch: Vec<(EmbeddingVector, ClassId)> = indices
            .iter()
            .map(|&i| dsyn.items()[i].clone())
            .collect();
        for (batch_idx, subset) in partition.iter().enumerate() {
            let loss = apply_expert_batch(
                experts, subset, &batch, cfg, &mut states, templates, iteration,
            )?;
            log.records.push(LossRecord {
                iteration,
                expert_batch: batch_idx,
                loss,
            });
        }
    }
    Ok(log)
}

fn check_disjoint(partition: &[&[ClassId]]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for subset in partition {
        for class in *subset {
            if !seen.insert(*class) {
                return Err(Error::contract(format!(
                    "class {class} appears in more than one expert batch"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::reference::EncoderConfig;
    use crate::ids::TaskId;
    use crate::numerics::tensor::l2_normalize;
    use crate::replay::dsyn::SyntheticDataset;

    pub(crate) fn tiny_encoder() -> Arc<ReferenceEncoder> {
        Arc::new(
            ReferenceEncoder::new(EncoderConfig {
                seed: 7,
                vocab: 64,
                d_tok: 8,
                hidden: 12,
                d_out: 8,
                adapted_layers: vec![0, 1],
            })
            .unwrap(),
        )
    }

    /// Synthetic dataset with one unit blob per class, spread over axes.
    pub(crate) fn blob_dataset(
        encoder: &ReferenceEncoder,
        classes: &[(u32, &str)],
        per_class: usize,
        seed: u64,
    ) -> SyntheticDataset {
        let mut items = Vec::new();
        let mut rng = SeededRng::new(seed);
        let d = encoder.dim();
        for (i, (id, _)) in classes.iter().enumerate() {
            let mut mean = vec![0.0; d];
            mean[i % d] = 1.0;
            mean[(i + 3) % d] = 0.5;
            for _ in 0..per_class {
                let mut v = mean.clone();
                for x in v.iter_mut() {
                    *x += 0.05 * rng.normal();
                }
                let e = l2_normalize(&Tensor1D::from_vec(v).unwrap()).unwrap();
                items.push((e, ClassId(*id)));
            }
        }
        SyntheticDataset::from_items(items)
    }

    fn experts_for(classes: &[(u32, &str)], encoder: Arc<ReferenceEncoder>) -> ExpertSet {
        let mut set = ExpertSet::new(encoder, AdapterVariant::Lora, 4, 99).unwrap();
        for (id, name) in classes {
            set.ensure_expert(ClassId(*id), name, TaskId(0));
        }
        set
    }

    fn adapters_fingerprint(set: &ExpertSet) -> Vec<u64> {
        set.entries()
            .map(|(_, e)| e.adapter.params().fingerprint())
            .collect()
    }

    #[test]
    fn zero_iterations_leave_experts_bitwise_unchanged() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover")];
        let ds = blob_dataset(&enc, &classes, 8, 1);
        let mut set = experts_for(&classes, enc);
        let before = adapters_fingerprint(&set);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let log =
            train_task_experts(&mut set, &ds, &cfg, TaskId(0), &TemplateLibrary::builtin())
                .unwrap();
        assert!(log.records.is_empty());
        assert_eq!(adapters_fingerprint(&set), before);
    }

    #[test]
    fn dataset_class_without_expert_is_contract_error() {
        let enc = tiny_encoder();
        let ds = blob_dataset(&enc, &[(0, "heron"), (1, "plover")], 4, 1);
        let mut set = experts_for(&[(0, "heron")], enc);
        let cfg = TrainConfig::default();
        assert!(train_task_experts(
            &mut set,
            &ds,
            &cfg,
            TaskId(0),
            &TemplateLibrary::builtin()
        )
        .is_err());
    }

    #[test]
    fn expert_batch_partitions_give_identical_parameters_under_sigmoid() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover"), (2, "gannet"), (3, "kestrel")];
        let ds = blob_dataset(&enc, &classes, 10, 2);
        let templates = TemplateLibrary::builtin();
        let mut results = Vec::new();
        for e_b in [1usize, 2, 4] {
            let mut set = experts_for(&classes, enc.clone());
            let cfg = TrainConfig {
                iterations: 12,
                data_batch: 6,
                expert_batch: e_b,
                lr: 5e-3,
                seed: 3,
                ..TrainConfig::default()
            };
            train_task_experts(&mut set, &ds, &cfg, TaskId(0), &templates).unwrap();
            results.push(adapters_fingerprint(&set));
        }
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
    }

    #[test]
    fn cross_entropy_diverges_across_partitions() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover"), (2, "gannet"), (3, "kestrel")];
        let ds = blob_dataset(&enc, &classes, 10, 2);
        let templates = TemplateLibrary::builtin();
        let mut results = Vec::new();
        for e_b in [1usize, 4] {
            let mut set = experts_for(&classes, enc.clone());
            let cfg = TrainConfig {
                iterations: 12,
                data_batch: 6,
                expert_batch: e_b,
                lr: 5e-3,
                loss: LossKind::CrossEntropy,
                seed: 3,
                ..TrainConfig::default()
            };
            train_task_experts(&mut set, &ds, &cfg, TaskId(0), &templates).unwrap();
            results.push(adapters_fingerprint(&set));
        }
        assert_ne!(results[0], results[1]);
    }

    #[test]
    fn empty_subset_is_a_no_op() {
        let enc = tiny_encoder();
        let classes = [(0, "heron")];
        let ds = blob_dataset(&enc, &classes, 4, 1);
        let mut set = experts_for(&classes, enc);
        let before = adapters_fingerprint(&set);
        let cfg = TrainConfig::default();
        let mut states = BTreeMap::new();
        let batch: Vec<_> = ds.items().to_vec();
        let loss = apply_expert_batch(
            &mut set,
            &[],
            &batch,
            &cfg,
            &mut states,
            &TemplateLibrary::builtin(),
            0,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(adapters_fingerprint(&set), before);
    }

    #[test]
    fn singleton_subset_only_touches_its_adapter() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover")];
        let ds = blob_dataset(&enc, &classes, 6, 1);
        let mut set = experts_for(&classes, enc);
        let before = adapters_fingerprint(&set);
        let cfg = TrainConfig::default();
        let mut states = BTreeMap::new();
        states.insert(
            ClassId(0),
            AdamWState::new(AdamWConfig::new(cfg.lr, cfg.weight_decay)).unwrap(),
        );
        let batch: Vec<_> = ds.items().to_vec();
        apply_expert_batch(
            &mut set,
            &[ClassId(0)],
            &batch,
            &cfg,
            &mut states,
            &TemplateLibrary::builtin(),
            0,
        )
        .unwrap();
        let after = adapters_fingerprint(&set);
        assert_ne!(after[0], before[0]);
        assert_eq!(after[1], before[1]);
    }

    #[test]
    fn duplicate_classes_in_subset_are_rejected() {
        let enc = tiny_encoder();
        let classes = [(0, "heron")];
        let ds = blob_dataset(&enc, &classes, 4, 1);
        let mut set = experts_for(&classes, enc);
        let cfg = TrainConfig::default();
        let mut states = BTreeMap::new();
        let batch: Vec<_> = ds.items().to_vec();
        assert!(apply_expert_batch(
            &mut set,
            &[ClassId(0), ClassId(0)],
            &batch,
            &cfg,
            &mut states,
            &TemplateLibrary::builtin(),
            0,
        )
        .is_err());
    }

    #[test]
    fn separable_blobs_reach_high_training_accuracy() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover")];
        let ds = blob_dataset(&enc, &classes, 30, 4);
        let mut set = experts_for(&classes, enc);
        let cfg = TrainConfig {
            iterations: 200,
            data_batch: 16,
            lr: 5e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        train_task_experts(&mut set, &ds, &cfg, TaskId(0), &TemplateLibrary::builtin()).unwrap();
        let acc = set.training_accuracy(ds.items()).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn frozen_old_experts_stay_put_when_retraining_disabled() {
        let enc = tiny_encoder();
        let classes = [(0, "heron"), (1, "plover")];
        let ds = blob_dataset(&enc, &classes, 8, 1);
        let mut set = experts_for(&classes, enc);
        // Mark class 0 as created in an earlier task.
        set.entries.get_mut(&ClassId(0)).unwrap().created_task = TaskId(0);
        set.entries.get_mut(&ClassId(1)).unwrap().created_task = TaskId(1);
        let before = adapters_fingerprint(&set);
        let cfg = TrainConfig {
            iterations: 5,
            data_batch: 4,
            retrain_old: false,
            ..TrainConfig::default()
        };
        train_task_experts(&mut set, &ds, &cfg, TaskId(1), &TemplateLibrary::builtin()).unwrap();
        let after = adapters_fingerprint(&set);
        assert_eq!(after[0], before[0], "old expert moved");
        assert_ne!(after[1], before[1], "new expert did not move");
    }

    #[test]
    fn template_draws_are_reproducible() {
        let cfg = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let lib = TemplateLibrary::builtin();
        let a: Vec<String> = (0..20)
            .map(|it| draw_template(&cfg, &lib, it, ClassId(3)).as_str().to_string())
            .collect();
        let b: Vec<String> = (0..20)
            .map(|it| draw_template(&cfg, &lib, it, ClassId(3)).as_str().to_string())
            .collect();
        assert_eq!(a, b);
        // Different classes draw independently.
        let c: Vec<String> = (0..20)
            .map(|it| draw_template(&cfg, &lib, it, ClassId(4)).as_str().to_string())
            .collect();
        assert_ne!(a, c);
    }
}
