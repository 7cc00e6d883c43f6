//! One-axis ablation sweeps: rerun the pipeline per value with shared seeds
//! and collect the metric reports into a comparison table.

use crate::bench::pipeline::{run_pipeline, seed_hash, PipelineConfig};
use crate::bench::stream::TaskStream;
use crate::bench::world::SyntheticWorld;
use crate::encoder::prompt::TemplateLibrary;
use crate::error::{Error, Result};
use crate::experts::train::LossKind;
use serde::{Deserialize, Serialize};

/// Sweepable configuration axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Loss,
    Alpha,
    K,
    TemplateAug,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "loss" => Ok(AblationAxis::Loss),
            "alpha" => Ok(AblationAxis::Alpha),
            "k" => Ok(AblationAxis::K),
            "template_aug" => Ok(AblationAxis::TemplateAug),
            other => Err(Error::contract(format!("unknown ablation axis {other}"))),
        }
    }
}

/// The values swept along one axis.
#[derive(Clone, Debug, PartialEq)]
pub enum AxisValues {
    Loss(Vec<LossKind>),
    Alpha(Vec<f64>),
    K(Vec<usize>),
    TemplateAug(Vec<bool>),
}

impl AxisValues {
    pub fn axis(&self) -> AblationAxis {
        match self {
            AxisValues::Loss(_) => AblationAxis::Loss,
            AxisValues::Alpha(_) => AblationAxis::Alpha,
            AxisValues::K(_) => AblationAxis::K,
            AxisValues::TemplateAug(_) => AblationAxis::TemplateAug,
        }
    }

    /// Parse comma-separated values for an axis.
    pub fn parse(axis: AblationAxis, values: &str) -> Result<Self> {
        let parts: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if parts.is_empty() {
            return Err(Error::contract("no ablation values supplied"));
        }
        match axis {
            AblationAxis::Loss => parts
                .iter()
                .map(|p| match p.to_lowercase().as_str() {
                    "sigmoid" => Ok(LossKind::Sigmoid),
                    "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
                    other => Err(Error::contract(format!("unknown loss {other}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(AxisValues::Loss),
            AblationAxis::Alpha => parts
                .iter()
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|e| Error::contract(format!("bad alpha {p}: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(AxisValues::Alpha),
            AblationAxis::K => parts
                .iter()
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|e| Error::contract(format!("bad K {p}: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(AxisValues::K),
            AblationAxis::TemplateAug => parts
                .iter()
                .map(|p| match p.to_lowercase().as_str() {
                    "on" | "true" | "1" => Ok(true),
                    "off" | "false" | "0" => Ok(false),
                    other => Err(Error::contract(format!("bad flag {other}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(AxisValues::TemplateAug),
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            AxisValues::Loss(v) => v
                .iter()
                .map(|l| match l {
                    LossKind::Sigmoid => "loss=sigmoid".to_string(),
                    LossKind::CrossEntropy => "loss=cross_entropy".to_string(),
                })
                .collect(),
            AxisValues::Alpha(v) => v.iter().map(|a| format!("alpha={a}")).collect(),
            AxisValues::K(v) => v.iter().map(|k| format!("k={k}")).collect(),
            AxisValues::TemplateAug(v) => v
                .iter()
                .map(|b| format!("template_aug={}", if *b { "on" } else { "off" }))
                .collect(),
        }
    }

    /// Base config with the i-th value applied. The alpha axis smooths both
    /// forged and seen prototypes so its 0 row degenerates to pure zero-shot
    /// classification.
    fn apply(&self, base: &PipelineConfig, i: usize) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            AxisValues::Loss(v) => cfg.experts.loss = v[i],
            AxisValues::Alpha(v) => {
                cfg.forge.alpha = v[i];
                cfg.eval.alpha_seen = v[i];
            }
            AxisValues::K(v) => cfg.forge.k = v[i],
            AxisValues::TemplateAug(v) => cfg.experts.template_augmentation = v[i],
        }
        cfg
    }

    fn len(&self) -> usize {
        match self {
            AxisValues::Loss(v) => v.len(),
            AxisValues::Alpha(v) => v.len(),
            AxisValues::K(v) => v.len(),
            AxisValues::TemplateAug(v) => v.len(),
        }
    }
}

/// One swept cell.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub report: crate::bench::metrics::MetricsReport,
    pub seed_hash: String,
}

/// Results of an ablation sweep, including the shared zero-shot baseline.
#[derive(Clone, Debug)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned markdown comparison table. The zero-shot baseline leads; it
    /// is identical across rows by construction, taken from the first.
    pub fn to_markdown(&self) -> String {
        let is_mtil = self
            .rows
            .first()
            .map(|r| r.report.mtil.is_some())
            .unwrap_or(false);
        let mut out = String::new();
        if is_mtil {
            out.push_str("| variant | transfer | avg | last |\n");
            out.push_str("|---|---|---|---|\n");
            if let Some(first) = self.rows.first() {
                if let Some(zs) = &first.report.zero_shot.mtil {
                    out.push_str(&format!(
                        "| zero-shot | {:.4} | {:.4} | {:.4} |\n",
                        zs.transfer, zs.avg, zs.last
                    ));
                }
            }
            for row in &self.rows {
                let m = row.report.mtil.as_ref().expect("mtil metrics");
                out.push_str(&format!(
                    "| {} | {:.4} | {:.4} | {:.4} |\n",
                    row.label, m.transfer, m.avg, m.last
                ));
            }
        } else {
            out.push_str("| variant | faa | ci_transfer |\n");
            out.push_str("|---|---|---|\n");
            if let Some(first) = self.rows.first() {
                let zs = &first.report.zero_shot;
                out.push_str(&format!(
                    "| zero-shot | {:.4} | {} |\n",
                    zs.faa,
                    zs.ci_transfer
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".to_string())
                ));
            }
            for row in &self.rows {
                out.push_str(&format!(
                    "| {} | {:.4} | {} |\n",
                    row.label,
                    row.report.faa,
                    row.report
                        .ci_transfer
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".to_string())
                ));
            }
        }
        out
    }
}

/// Run the pipeline once per value with shared seeds.
pub fn ablate(
    world: &SyntheticWorld,
    stream: &TaskStream,
    base: &PipelineConfig,
    values: &AxisValues,
    templates: &TemplateLibrary,
) -> Result<AblationTable> {
    if values.len() == 0 {
        return Err(Error::contract("ablation needs at least one value"));
    }
    let labels = values.labels();
    let mut rows = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let cfg = values.apply(base, i);
        let out = run_pipeline(world, stream, &cfg, templates)?;
        rows.push(AblationRow {
            label: labels[i].clone(),
            report: out.report,
            seed_hash: seed_hash(&cfg),
        });
    }
    Ok(AblationTable {
        axis: values.axis(),
        rows,
    })
}
