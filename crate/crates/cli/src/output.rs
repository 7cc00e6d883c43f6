//! Artifact writers: the output directory layout is
//! `out_dir/{config.lock, hub.modr, accuracy.csv, metrics.json, report.md,
//! logs/}`.

use crate::config::RunConfig;
use moder::bench::{AblationTable, PipelineOutput, SyntheticWorld};
use serde_json::{json, Value};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// World description: parameters plus the full roster with visual means.
pub fn write_world(world: &SyntheticWorld, cfg: &RunConfig, out: &Path) -> moder::Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let body = json!({
        "config_hash": cfg.hash(),
        "world": world,
    });
    std::fs::write(out, serde_json::to_string_pretty(&body).expect("world json"))?;
    Ok(())
}

/// Metrics JSON: the library report plus run metadata. `generated_at` is
/// the only field expected to differ between identical runs.
fn metrics_json(cfg: &RunConfig, outcome: &PipelineOutput) -> String {
    let mut value = serde_json::to_value(&outcome.report).expect("report serializes");
    let obj = value.as_object_mut().expect("report is an object");
    obj.insert("generated_at".into(), json!(timestamp()));
    obj.insert("run_config_hash".into(), json!(cfg.hash()));
    serde_json::to_string_pretty(&value).expect("metrics json")
}

fn report_markdown(cfg: &RunConfig, outcome: &PipelineOutput) -> String {
    let r = &outcome.report;
    let mut out = String::new();
    out.push_str("# Run report\n\n");
    out.push_str(&format!("- config hash: `{}`\n", cfg.hash()));
    out.push_str(&format!("- master seed: {}\n", r.master_seed));
    out.push_str(&format!("- protocol: {}\n", r.protocol));
    out.push_str(&format!("- tasks: {}\n", r.num_tasks));
    out.push_str(&format!("- hub size: {}\n\n", outcome.hub.len()));

    out.push_str("## Metrics\n\n");
    out.push_str("| metric | run | zero-shot |\n|---|---|---|\n");
    out.push_str(&format!(
        "| faa | {:.4} | {:.4} |\n",
        r.faa, r.zero_shot.faa
    ));
    if let (Some(ci), Some(zci)) = (r.ci_transfer, r.zero_shot.ci_transfer) {
        out.push_str(&format!("| ci_transfer | {ci:.4} | {zci:.4} |\n"));
    }
    if let (Some(m), Some(zm)) = (&r.mtil, &r.zero_shot.mtil) {
        out.push_str(&format!(
            "| transfer | {:.4} | {:.4} |\n| avg | {:.4} | {:.4} |\n| last | {:.4} | {:.4} |\n",
            m.transfer, zm.transfer, m.avg, zm.avg, m.last, zm.last
        ));
    }

    out.push_str("\n## Accuracy matrix\n\n```\n");
    out.push_str(&outcome.matrix.to_csv());
    out.push_str("```\n");
    out
}

/// Write every artifact of a pipeline run.
pub fn write_run(cfg: &RunConfig, outcome: &PipelineOutput, out_dir: &Path) -> moder::Result<()> {
    let logs = out_dir.join("logs");
    std::fs::create_dir_all(&logs)?;

    let lock = json!({
        "hash": cfg.hash(),
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    std::fs::write(
        out_dir.join("config.lock"),
        serde_json::to_string_pretty(&lock).expect("lock json"),
    )?;

    outcome.hub.save(&out_dir.join("hub.modr"))?;
    std::fs::write(out_dir.join("accuracy.csv"), outcome.matrix.to_csv())?;
    std::fs::write(
        out_dir.join("zero_shot_accuracy.csv"),
        outcome.zero_shot_matrix.to_csv(),
    )?;
    std::fs::write(out_dir.join("metrics.json"), metrics_json(cfg, outcome))?;
    std::fs::write(out_dir.join("report.md"), report_markdown(cfg, outcome))?;

    for (t, losses) in outcome.generator_losses.iter().enumerate() {
        let mut csv = String::from("iteration,loss\n");
        for (i, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(logs.join(format!("generator_task{t}.csv")), csv)?;
    }
    for (t, log) in outcome.expert_logs.iter().enumerate() {
        std::fs::write(logs.join(format!("experts_task{t}.csv")), log.to_csv())?;
    }
    let reports: Vec<Value> = outcome
        .merge_reports
        .iter()
        .map(|(t, r)| {
            json!({
                "checkpoint": t,
                "report": serde_json::to_value(r).expect("merge report serializes"),
            })
        })
        .collect();
    std::fs::write(
        logs.join("merge_reports.json"),
        serde_json::to_string_pretty(&reports).expect("merge reports json"),
    )?;
    Ok(())
}

/// Write the comparison table and one metrics JSON per swept value.
pub fn write_ablation(
    cfg: &RunConfig,
    table: &AblationTable,
    out_dir: &Path,
) -> moder::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("table.md"), table.to_markdown())?;
    for row in &table.rows {
        let name = row
            .label
            .replace(['=', '.', ' '], "_")
            .replace(',', "-");
        let mut value = serde_json::to_value(&row.report).expect("report serializes");
        let obj = value.as_object_mut().expect("report object");
        obj.insert("generated_at".into(), json!(timestamp()));
        obj.insert("run_config_hash".into(), json!(cfg.hash()));
        obj.insert("seed_hash".into(), json!(row.seed_hash));
        std::fs::write(
            out_dir.join(format!("metrics_{name}.json")),
            serde_json::to_string_pretty(&value).expect("metrics json"),
        )?;
    }
    Ok(())
}
