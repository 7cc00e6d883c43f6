//! Incremental task streams over a synthetic world.

use crate::bench::world::SyntheticWorld;
use crate::error::{Error, Result};
use crate::ids::{ClassId, TaskId};
use crate::numerics::rng::{derive_seed, SeededRng};
use crate::numerics::tensor::EmbeddingVector;
use serde::{Deserialize, Serialize};

/// Evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Class-incremental: task identity unknown at test time; candidates
    /// span every class.
    ClassIl,
    /// Multi-domain task-incremental: task identity known; candidates are
    /// the task's own classes. Tasks are the world's families.
    Mtil,
}

/// How classes are ordered before being chunked into tasks (class-
/// incremental protocol only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Seeded permutation of the roster; the seed defines the class order.
    Shuffled,
    /// Round-robin across families, so every family spans many tasks.
    Interleaved,
}

/// Stream layout parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub protocol: Protocol,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub order: ClassOrder,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            protocol: Protocol::ClassIl,
            tasks: 5,
            classes_per_task: 4,
            train_per_class: 100,
            test_per_class: 50,
            order: ClassOrder::Shuffled,
        }
    }
}

/// One task: a disjoint set of classes.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub classes: Vec<ClassId>,
}

/// Ordered task sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub protocol: Protocol,
    pub tasks: Vec<TaskSpec>,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn all_classes(&self) -> Vec<ClassId> {
        self.tasks.iter().flat_map(|t| t.classes.clone()).collect()
    }

    /// Classes of tasks `0..=t`.
    pub fn seen_classes(&self, t: usize) -> Vec<ClassId> {
        self.tasks[..=t]
            .iter()
            .flat_map(|task| task.classes.clone())
            .collect()
    }

    /// Classes of tasks after `t`.
    pub fn unseen_classes(&self, t: usize) -> Vec<ClassId> {
        self.tasks[t + 1..]
            .iter()
            .flat_map(|task| task.classes.clone())
            .collect()
    }
}

/// Lay out a stream over a world, using `order_seed` for shuffled class
/// order.
pub fn build_stream(
    world: &SyntheticWorld,
    config: &StreamConfig,
    order_seed: u64,
) -> Result<TaskStream> {
    if config.train_per_class == 0 || config.test_per_class == 0 {
        return Err(Error::contract("per-class sample counts must be positive"));
    }
    let tasks = match config.protocol {
        Protocol::ClassIl => {
            let needed = config.tasks * config.classes_per_task;
            if config.tasks == 0 || config.classes_per_task == 0 {
                return Err(Error::contract("stream needs at least one task and class"));
            }
            if needed > world.len() {
                return Err(Error::contract(format!(
                    "stream needs {needed} classes but the world has {}",
                    world.len()
                )));
            }
            let mut order: Vec<ClassId> = match config.order {
                ClassOrder::Shuffled => {
                    let mut ids: Vec<ClassId> = world.classes().iter().map(|c| c.id).collect();
                    let mut rng = SeededRng::new(derive_seed(order_seed, "class-order", 0));
                    rng.shuffle(&mut ids);
                    ids
                }
                ClassOrder::Interleaved => {
                    let families = world.config().families;
                    let per_family = world.config().classes_per_family;
                    let mut ids = Vec::with_capacity(world.len());
                    for c in 0..per_family {
                        for f in 0..families {
                            ids.push(world.classes()[f * per_family + c].id);
                        }
                    }
                    ids
                }
            };
            order.truncate(needed);
            order
                .chunks(config.classes_per_task)
                .enumerate()
                .map(|(i, chunk)| TaskSpec {
                    id: TaskId(i as u32),
                    classes: chunk.to_vec(),
                })
                .collect()
        }
        Protocol::Mtil => {
            // One domain per family.
            if config.tasks != world.config().families {
                return Err(Error::contract(format!(
                    "multi-domain stream needs tasks == families ({} != {})",
                    config.tasks,
                    world.config().families
                )));
            }
            (0..world.config().families)
                .map(|f| TaskSpec {
                    id: TaskId(f as u32),
                    classes: world
                        .classes()
                        .iter()
                        .filter(|c| c.family == f)
                        .map(|c| c.id)
                        .collect(),
                })
                .collect()
        }
    };
    Ok(TaskStream {
        protocol: config.protocol,
        tasks,
        train_per_class: config.train_per_class,
        test_per_class: config.test_per_class,
    })
}

/// Per-task train/test sets.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Vec<Vec<(EmbeddingVector, ClassId)>>,
    pub test: Vec<Vec<(EmbeddingVector, ClassId)>>,
}

/// Draw deterministic train/test splits for every task.
pub fn sample_split(
    world: &SyntheticWorld,
    stream: &TaskStream,
    split_seed: u64,
) -> Result<SplitData> {
    let mut train = Vec::with_capacity(stream.num_tasks());
    let mut test = Vec::with_capacity(stream.num_tasks());
    for task in &stream.tasks {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for &class in &task.classes {
            for e in world.sample_class(
                class,
                stream.train_per_class,
                derive_seed(split_seed, "train", class.0 as u64),
            )? {
                tr.push((e, class));
            }
            for e in world.sample_class(
                class,
                stream.test_per_class,
                derive_seed(split_seed, "test", class.0 as u64),
            )? {
                te.push((e, class));
            }
        }
        train.push(tr);
        test.push(te);
    }
    Ok(SplitData { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::world::{generate_world, WorldConfig};
    use crate::encoder::reference::{EncoderConfig, ReferenceEncoder};
    use std::collections::BTreeSet;

    fn world() -> SyntheticWorld {
        let enc = ReferenceEncoder::new(EncoderConfig {
            seed: 3,
            vocab: 128,
            d_tok: 8,
            hidden: 16,
            d_out: 12,
            adapted_layers: vec![0, 1],
        })
        .unwrap();
        generate_world(&WorldConfig::default(), &enc).unwrap()
    }

    #[test]
    fn class_il_tasks_are_disjoint_and_cover_the_roster() {
        let w = world();
        let stream = build_stream(&w, &StreamConfig::default(), 1992).unwrap();
        assert_eq!(stream.num_tasks(), 5);
        let mut seen = BTreeSet::new();
        for task in &stream.tasks {
            assert_eq!(task.classes.len(), 4);
            for c in &task.classes {
                assert!(seen.insert(*c), "class {c} appears twice");
            }
        }
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn order_seed_changes_the_layout() {
        let w = world();
        let a = build_stream(&w, &StreamConfig::default(), 1992).unwrap();
        let b = build_stream(&w, &StreamConfig::default(), 1992).unwrap();
        let c = build_stream(&w, &StreamConfig::default(), 1996).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interleaved_order_spreads_families() {
        let w = world();
        let cfg = StreamConfig {
            order: ClassOrder::Interleaved,
            ..StreamConfig::default()
        };
        let stream = build_stream(&w, &cfg, 0).unwrap();
        // First task holds one class from families 0..4 (roster is 5x4).
        let fams: Vec<usize> = stream.tasks[0]
            .classes
            .iter()
            .map(|c| w.class(*c).unwrap().family)
            .collect();
        assert_eq!(fams, vec![0, 1, 2, 3]);
    }

    #[test]
    fn mtil_tasks_are_families() {
        let enc = ReferenceEncoder::new(EncoderConfig::default()).unwrap();
        let wcfg = WorldConfig {
            families: 4,
            classes_per_family: 5,
            ..WorldConfig::default()
        };
        let w = generate_world(&wcfg, &enc).unwrap();
        let cfg = StreamConfig {
            protocol: Protocol::Mtil,
            tasks: 4,
            classes_per_task: 5,
            ..StreamConfig::default()
        };
        let stream = build_stream(&w, &cfg, 0).unwrap();
        assert_eq!(stream.num_tasks(), 4);
        for (f, task) in stream.tasks.iter().enumerate() {
            assert_eq!(task.classes.len(), 5);
            for c in &task.classes {
                assert_eq!(w.class(*c).unwrap().family, f);
            }
        }
    }

    #[test]
    fn insufficient_classes_is_contract_error() {
        let w = world();
        let cfg = StreamConfig {
            tasks: 6,
            classes_per_task: 4,
            ..StreamConfig::default()
        };
        assert!(build_stream(&w, &cfg, 0).is_err());
    }

    #[test]
    fn splits_are_deterministic() {
        let w = world();
        let stream = build_stream(&w, &StreamConfig::default(), 1992).unwrap();
        let a = sample_split(&w, &stream, 5).unwrap();
        let b = sample_split(&w, &stream, 5).unwrap();
        for t in 0..stream.num_tasks() {
            assert_eq!(a.train[t], b.train[t]);
            assert_eq!(a.test[t], b.test[t]);
        }
        assert_eq!(a.train[0].len(), 4 * 100);
        assert_eq!(a.test[0].len(), 4 * 50);
    }
}
