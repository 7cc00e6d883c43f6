//! The foundational hub: a growing store of class experts with cached
//! zero-shot embeddings, plus the machinery that forges prototypes for
//! unseen classes (top-K retrieval, softmax affinity weights, weight-space
//! merge, alpha-smoothing) and classifies in both incremental protocols.

mod format;

use crate::encoder::adapter::{combine_refs, AdapterModule, AdapterSpace, AdapterVariant, TaskVector};
use crate::encoder::prompt::{ClassPrompt, PromptTemplate};
use crate::encoder::reference::ReferenceEncoder;
use crate::error::{Error, Result};
use crate::ids::{ClassId, TaskId};
use crate::numerics::tensor::{softmax, EmbeddingVector, Tensor1D};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

pub use format::HubSummary;

/// How unseen-class prototypes are forged: retrieval width, smoothing
/// strength, softmax temperature, and the template used to synthesize the
/// unseen prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    pub k: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub template: PromptTemplate,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            k: 5,
            alpha: 0.5,
            temperature: 1.0,
            template: PromptTemplate::canonical(),
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::contract("forge K must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::contract(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::contract("softmax temperature must be positive"));
        }
        Ok(())
    }
}

/// One stored expert.
#[derive(Clone, Debug)]
pub struct HubEntry {
    pub class_id: ClassId,
    pub name: String,
    pub adapter: AdapterModule,
    /// Zero-shot text embedding under the canonical template, cached at
    /// insertion; serves text-to-text retrieval.
    pub zero_shot: EmbeddingVector,
    pub created_task: TaskId,
}

/// Contribution of one retrieved expert to a forged prototype.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeContributor {
    pub class_id: u32,
    pub class_name: String,
    pub raw_sim: f64,
    pub weight: f64,
}

/// Record of one forge: who contributed, with what affinity, under what
/// smoothing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeReport {
    pub target: String,
    pub k: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub contributors: Vec<MergeContributor>,
}

impl MergeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("merge report serializes")
    }
}

/// Ranked classification scores (cosine similarities, descending).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    ranking: Vec<(ClassId, f64)>,
}

impl Prediction {
    fn from_scores(mut scores: Vec<(ClassId, f64)>) -> Self {
        scores.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        Prediction { ranking: scores }
    }

    pub fn ranking(&self) -> &[(ClassId, f64)] {
        &self.ranking
    }

    pub fn top(&self) -> (ClassId, f64) {
        self.ranking[0]
    }
}

/// An unseen class to forge a prototype for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnseenClass {
    pub id: ClassId,
    pub name: String,
}

/// Candidate restriction at classification time.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassifyMode {
    /// Score over the full union of seen and unseen candidates.
    ClassIl,
    /// Task identity is known: score only the given task's classes.
    Mtil(Vec<ClassId>),
}

/// Precomputed class prototypes, reusable across test samples.
#[derive(Clone, Debug)]
pub struct PrototypeTable {
    entries: Vec<(ClassId, EmbeddingVector)>,
}

impl PrototypeTable {
    pub fn from_entries(entries: Vec<(ClassId, EmbeddingVector)>) -> Self {
        PrototypeTable { entries }
    }

    pub fn entries(&self) -> &[(ClassId, EmbeddingVector)] {
        &self.entries
    }

    pub fn get(&self, class: ClassId) -> Option<&EmbeddingVector> {
        self.entries
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, e)| e)
    }

    /// Score one visual embedding against every prototype.
    pub fn score(&self, z_vis: &EmbeddingVector) -> Result<Prediction> {
        if self.entries.is_empty() {
            return Err(Error::contract("no candidate classes"));
        }
        let scores = self
            .entries
            .iter()
            .map(|(c, p)| z_vis.cosine(p).map(|s| (*c, s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction::from_scores(scores))
    }

    /// Restrict to a class subset (task-incremental scoring).
    pub fn restricted(&self, classes: &[ClassId]) -> Result<PrototypeTable> {
        let mut entries = Vec::with_capacity(classes.len());
        for &c in classes {
            let e = self
                .get(c)
                .ok_or_else(|| Error::contract(format!("no prototype for class {c}")))?;
            entries.push((c, e.clone()));
        }
        Ok(PrototypeTable { entries })
    }
}

/// Growing store of per-class experts bound to one encoder.
#[derive(Clone, Debug)]
pub struct FoundationalHub {
    entries: Vec<HubEntry>,
    space: AdapterSpace,
    hub_seed: u64,
    encoder_fingerprint: u64,
    dim: usize,
}

impl FoundationalHub {
    pub fn new(
        encoder: &ReferenceEncoder,
        variant: AdapterVariant,
        rank: usize,
        hub_seed: u64,
    ) -> Result<Self> {
        let space = AdapterSpace::new(variant, rank, encoder.adapted_shapes(), hub_seed)?;
        Ok(FoundationalHub {
            entries: Vec::new(),
            space,
            hub_seed,
            encoder_fingerprint: encoder.fingerprint(),
            dim: encoder.dim(),
        })
    }

    pub(crate) fn from_parts(
        entries: Vec<HubEntry>,
        space: AdapterSpace,
        hub_seed: u64,
        encoder_fingerprint: u64,
        dim: usize,
    ) -> Self {
        FoundationalHub {
            entries,
            space,
            hub_seed,
            encoder_fingerprint,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[HubEntry] {
        &self.entries
    }

    pub fn space(&self) -> &AdapterSpace {
        &self.space
    }

    pub fn hub_seed(&self) -> u64 {
        self.hub_seed
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        self.encoder_fingerprint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class: ClassId) -> Option<&HubEntry> {
        self.entries.iter().find(|e| e.class_id == class)
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.get(class).is_some()
    }

    fn check_encoder(&self, encoder: &ReferenceEncoder) -> Result<()> {
        if encoder.fingerprint() != self.encoder_fingerprint {
            return Err(Error::contract(format!(
                "encoder fingerprint {:016x} does not match hub fingerprint {:016x}",
                encoder.fingerprint(),
                self.encoder_fingerprint
            )));
        }
        Ok(())
    }

    /// Append a new class expert, caching its zero-shot embedding under the
    /// canonical template.
    pub fn insert(
        &mut self,
        class_id: ClassId,
        name: &str,
        adapter: AdapterModule,
        encoder: &ReferenceEncoder,
        created_task: TaskId,
    ) -> Result<()> {
        self.check_encoder(encoder)?;
        if self.contains(class_id) {
            return Err(Error::contract(format!(
                "class {class_id} already stored in the hub"
            )));
        }
        if adapter.variant() != self.space.variant() {
            return Err(Error::contract("adapter variant does not match hub"));
        }
        let prompt = ClassPrompt::canonical(class_id, name);
        let zero_shot = encoder.zero_shot(&prompt)?;
        self.entries.push(HubEntry {
            class_id,
            name: name.to_string(),
            adapter,
            zero_shot,
            created_task,
        });
        Ok(())
    }

    /// Replace the adapter of an existing entry (retraining sync). The
    /// zero-shot cache is frozen, so it stays untouched.
    pub fn update_adapter(&mut self, class_id: ClassId, adapter: AdapterModule) -> Result<()> {
        if adapter.variant() != self.space.variant() {
            return Err(Error::contract("adapter variant does not match hub"));
        }
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.class_id == class_id)
            .ok_or(Error::UnknownClass(class_id))?;
        entry.adapter = adapter;
        Ok(())
    }

    /// The K stored experts whose cached zero-shot embeddings are most
    /// similar to the prompt's zero-shot embedding. Descending similarity,
    /// ties broken by lower class id, K clamped to the hub size.
    pub fn top_k(
        &self,
        encoder: &ReferenceEncoder,
        prompt_text: &str,
        k: usize,
    ) -> Result<Vec<(ClassId, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::contract("top_k on an empty hub"));
        }
        if k < 1 {
            return Err(Error::contract("top_k requires K >= 1"));
        }
        self.check_encoder(encoder)?;
        let query = encoder.encode_text(prompt_text, None, 0.0)?;
        self.top_k_for_query(&query, k)
    }

    fn top_k_for_query(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(ClassId, f64)>> {
        let mut sims = self
            .entries
            .iter()
            .map(|e| query.cosine(&e.zero_shot).map(|s| (e.class_id, s)))
            .collect::<Result<Vec<_>>>()?;
        sims.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        sims.truncate(k.min(self.entries.len()));
        Ok(sims)
    }

    /// Forge a prototype for an unseen class: retrieve the top-K most
    /// text-similar experts, softmax their raw similarities into merge
    /// weights, combine their task vectors, and encode the unseen prompt
    /// with the smoothed merged weights.
    pub fn forge(
        &self,
        encoder: &ReferenceEncoder,
        class_name: &str,
        cfg: &ForgeConfig,
    ) -> Result<(EmbeddingVector, MergeReport)> {
        if self.entries.is_empty() {
            return Err(Error::contract("forge on an empty hub"));
        }
        cfg.validate()?;
        self.check_encoder(encoder)?;

        let prompt_text = cfg.template.render(class_name)?;
        let top = {
            let query = encoder.encode_text(&prompt_text, None, 0.0)?;
            self.top_k_for_query(&query, cfg.k)?
        };
        let raw: Vec<f64> = top.iter().map(|(_, s)| s / cfg.temperature).collect();
        let weights = softmax(&Tensor1D::from_vec(raw)?);

        let mut tvs = Vec::with_capacity(top.len());
        for (class_id, _) in &top {
            let entry = self.get(*class_id).expect("retrieved entry exists");
            tvs.push(self.space.materialize(&entry.adapter)?);
        }
        let pairs: Vec<(&TaskVector, f64)> = tvs
            .iter()
            .zip(weights.as_slice())
            .map(|(tv, &w)| (tv, w))
            .collect();
        let merged = combine_refs(&pairs)?;
        let embedding = encoder.encode_text(&prompt_text, Some(&merged), cfg.alpha)?;

        let contributors = top
            .iter()
            .zip(weights.as_slice())
            .map(|((class_id, raw_sim), &weight)| MergeContributor {
                class_id: class_id.0,
                class_name: self.get(*class_id).unwrap().name.clone(),
                raw_sim: *raw_sim,
                weight,
            })
            .collect();
        Ok((
            embedding,
            MergeReport {
                target: class_name.to_string(),
                k: top.len(),
                alpha: cfg.alpha,
                temperature: cfg.temperature,
                contributors,
            },
        ))
    }

    /// Prototype of a stored class: its own expert under the canonical
    /// template, smoothed by `alpha_seen` (1.0 keeps the expert at full
    /// strength).
    pub fn seen_prototype(
        &self,
        encoder: &ReferenceEncoder,
        class_id: ClassId,
        alpha_seen: f64,
    ) -> Result<EmbeddingVector> {
        self.check_encoder(encoder)?;
        let entry = self.get(class_id).ok_or(Error::UnknownClass(class_id))?;
        let tv = self.space.materialize(&entry.adapter)?;
        let prompt = ClassPrompt::canonical(class_id, entry.name.clone());
        encoder.encode(&prompt, Some(&tv), alpha_seen)
    }

    /// Prototypes for a set of seen classes (own experts) and unseen classes
    /// (forged). Reusable across many test samples.
    pub fn build_prototypes(
        &self,
        encoder: &ReferenceEncoder,
        seen: &[ClassId],
        unseen: &[UnseenClass],
        cfg: &ForgeConfig,
        alpha_seen: f64,
    ) -> Result<PrototypeTable> {
        let mut entries = Vec::with_capacity(seen.len() + unseen.len());
        for &class in seen {
            entries.push((class, self.seen_prototype(encoder, class, alpha_seen)?));
        }
        for u in unseen {
            let (proto, _) = self.forge(encoder, &u.name, cfg)?;
            entries.push((u.id, proto));
        }
        Ok(PrototypeTable { entries })
    }

    /// Classify one visual embedding. Seen classes score through their own
    /// experts, unseen classes through forged prototypes; the mode picks the
    /// candidate set (full union for class-incremental, the task's classes
    /// for task-incremental).
    pub fn classify(
        &self,
        encoder: &ReferenceEncoder,
        z_vis: &EmbeddingVector,
        seen: &[ClassId],
        unseen: &[UnseenClass],
        cfg: &ForgeConfig,
        alpha_seen: f64,
        mode: &ClassifyMode,
    ) -> Result<Prediction> {
        let seen_set: BTreeSet<ClassId> = seen.iter().copied().collect();
        if unseen.iter().any(|u| seen_set.contains(&u.id)) {
            return Err(Error::contract("seen and unseen class sets overlap"));
        }
        if seen.is_empty() && unseen.is_empty() {
            return Err(Error::contract("no candidate classes"));
        }
        let table = self.build_prototypes(encoder, seen, unseen, cfg, alpha_seen)?;
        match mode {
            ClassifyMode::ClassIl => table.score(z_vis),
            ClassifyMode::Mtil(task_classes) => {
                if task_classes.is_empty() {
                    return Err(Error::contract("no candidate classes for the task"));
                }
                table.restricted(task_classes)?.score(z_vis)
            }
        }
    }

    /// Write the hub to disk (float32 payloads).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format::encode(self)?)?;
        Ok(())
    }

    /// Read a hub back; the encoder must fingerprint-match the one the hub
    /// was built with.
    pub fn load(path: &Path, encoder: &ReferenceEncoder) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        format::decode(&bytes, encoder)
    }

    /// Structural inspection of a hub file without an encoder: validates the
    /// container layout and returns the stored metadata.
    pub fn inspect(path: &Path) -> Result<HubSummary> {
        let bytes = std::fs::read(path)?;
        format::summarize(&bytes)
    }
}
