//! The full run configuration tree, loaded from a single TOML file.
//!
//! Every field has a default, so a config file only needs the overrides.
//! Flags beat the file, which beats the defaults; the MODER_SEED variable
//! slots between file and flags for the master seed.

use moder::bench::{
    config_hash, AdapterConfig, EvalConfig, PipelineConfig, ReplayConfig, StreamConfig,
    WorldConfig,
};
use moder::encoder::{EncoderConfig, TemplateLibrary};
use moder::experts::TrainConfig;
use moder::hub::ForgeConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where prompt templates come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// Number of built-in templates to use (ignored when `file` is set).
    pub count: usize,
    /// Plain-text template file, one template per line, `{CLS}` required.
    pub file: Option<PathBuf>,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            count: 16,
            file: None,
        }
    }
}

/// Complete configuration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Upper bound on worker threads.
    pub threads: usize,
    pub mix_real_current: bool,
    pub world: WorldConfig,
    pub stream: StreamConfig,
    pub templates: TemplateConfig,
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub replay: ReplayConfig,
    pub experts: TrainConfig,
    pub forge: ForgeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 1992,
            threads: 1,
            mix_real_current: false,
            world: WorldConfig::default(),
            stream: StreamConfig::default(),
            templates: TemplateConfig::default(),
            encoder: EncoderConfig::default(),
            adapter: AdapterConfig::default(),
            replay: ReplayConfig::default(),
            experts: TrainConfig::default(),
            forge: ForgeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML config file. Parse errors carry the offending line.
    pub fn from_file(path: &Path) -> moder::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            moder::Error::Contract(format!("config {}: {e}", path.display()))
        })
    }

    pub fn validate(&self) -> moder::Result<()> {
        if self.threads == 0 {
            return Err(moder::Error::Contract("threads must be at least 1".into()));
        }
        self.forge.validate()?;
        Ok(())
    }

    /// World parameters; the world seed follows the master seed so each
    /// run's class order and shifts are reproducible from one number.
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.world.seed,
            ..self.world.clone()
        }
    }

    pub fn template_library(&self) -> moder::Result<TemplateLibrary> {
        match &self.templates.file {
            Some(path) => TemplateLibrary::from_file(path),
            None => TemplateLibrary::builtin_truncated(self.templates.count),
        }
    }

    /// The library-level pipeline configuration embedded in this run.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            encoder: self.encoder.clone(),
            adapter: self.adapter.clone(),
            replay: self.replay.clone(),
            experts: self.experts.clone(),
            forge: self.forge.clone(),
            eval: self.eval.clone(),
            mix_real_current: self.mix_real_current,
            master_seed: self.master_seed,
        }
    }

    /// Canonical content hash: key order in the source file is irrelevant.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Canonical JSON used for `config.lock`.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&value).expect("canonical json")
    }
}
