//! Command-line front end: configuration loading, pipeline runs, ablations,
//! and hub inspection.

pub mod config;
pub mod output;

use clap::{Args, Parser, Subcommand};
use moder::bench::{ablate, build_stream, generate_world, run_pipeline, AxisValues};
use moder::encoder::ReferenceEncoder;
use moder::hub::FoundationalHub;
use std::path::PathBuf;
use std::process::ExitCode;

use config::RunConfig;

/// Exit categories: 1 config, 2 io/format, 3 numeric divergence.
pub fn exit_code_for(err: &moder::Error) -> u8 {
    use moder::Error::*;
    match err {
        Io(_) | Format(_) => 2,
        Divergence(_) => 3,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "moder",
    about = "Per-class textual experts with diffusion replay and a foundational hub",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonRunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed (beats the config file and MODER_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads (the current engine evaluates sequentially;
    /// values above 1 are accepted as an upper bound).
    #[arg(long)]
    threads: Option<usize>,
    /// Use the printed transfer bound that sums through the exposure
    /// checkpoint.
    #[arg(long)]
    mtil_transfer_inclusive: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world and write its roster description.
    GenWorld {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Output file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full incremental pipeline.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one configuration axis with shared seeds.
    Ablate {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Axis: loss | alpha | k | template-aug.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long)]
        values: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect or verify a stored hub.
    Hub {
        #[command(subcommand)]
        action: HubAction,
    },
}

#[derive(Subcommand, Debug)]
enum HubAction {
    /// Print a human-readable listing of a hub file.
    Inspect { path: PathBuf },
    /// Validate a hub file's structure, and its encoder fingerprint when a
    /// config is supplied.
    Verify {
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(common: &CommonRunArgs) -> moder::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    // Precedence: CLI flag > MODER_SEED > config file > defaults.
    if let Ok(env_seed) = std::env::var("MODER_SEED") {
        let parsed = env_seed.parse::<u64>().map_err(|e| {
            moder::Error::Contract(format!("MODER_SEED {env_seed:?} is not a u64: {e}"))
        })?;
        cfg.master_seed = parsed;
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(moder::Error::Contract("threads must be at least 1".into()));
        }
        cfg.threads = threads;
    }
    if common.mtil_transfer_inclusive {
        cfg.eval.mtil_transfer_inclusive = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_world(common: &CommonRunArgs, out: &PathBuf) -> moder::Result<()> {
    let cfg = load_config(common)?;
    let encoder = ReferenceEncoder::new(cfg.encoder.clone())?;
    let world = generate_world(&cfg.world_config(), &encoder)?;
    output::write_world(&world, &cfg, out)?;
    println!(
        "world: {} classes in {} families -> {}",
        world.len(),
        world.config().families,
        out.display()
    );
    Ok(())
}

fn cmd_run(common: &CommonRunArgs, out_dir: &PathBuf) -> moder::Result<()> {
    let cfg = load_config(common)?;
    let encoder = ReferenceEncoder::new(cfg.encoder.clone())?;
    let world = generate_world(&cfg.world_config(), &encoder)?;
    let stream = build_stream(&world, &cfg.stream, cfg.master_seed)?;
    let templates = cfg.template_library()?;
    let pipeline_cfg = cfg.pipeline_config();
    let outcome = run_pipeline(&world, &stream, &pipeline_cfg, &templates)?;
    output::write_run(&cfg, &outcome, out_dir)?;
    println!("faa: {:.4}", outcome.report.faa);
    if let Some(ci) = outcome.report.ci_transfer {
        println!("ci_transfer: {ci:.4}");
    }
    if let Some(m) = &outcome.report.mtil {
        println!(
            "transfer: {:.4}  avg: {:.4}  last: {:.4}",
            m.transfer, m.avg, m.last
        );
    }
    println!("artifacts -> {}", out_dir.display());
    Ok(())
}

fn cmd_ablate(
    common: &CommonRunArgs,
    axis: &str,
    values: &str,
    out_dir: &PathBuf,
) -> moder::Result<()> {
    let cfg = load_config(common)?;
    let parsed_axis = axis.parse()?;
    let axis_values = AxisValues::parse(parsed_axis, values)?;
    let encoder = ReferenceEncoder::new(cfg.encoder.clone())?;
    let world = generate_world(&cfg.world_config(), &encoder)?;
    let stream = build_stream(&world, &cfg.stream, cfg.master_seed)?;
    let templates = cfg.template_library()?;
    let table = ablate(
        &world,
        &stream,
        &cfg.pipeline_config(),
        &axis_values,
        &templates,
    )?;
    output::write_ablation(&cfg, &table, out_dir)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_hub(action: &HubAction) -> moder::Result<()> {
    match action {
        HubAction::Inspect { path } => {
            let summary = FoundationalHub::inspect(path)?;
            println!("hub file: {}", path.display());
            println!("encoder fingerprint: {:016x}", summary.fingerprint);
            println!("hub seed: {}", summary.hub_seed);
            println!(
                "adapter: {:?} rank {} over layers {:?}",
                summary.variant, summary.rank, summary.layer_shapes
            );
            println!("entries: {}", summary.entries.len());
            for (id, name, task) in &summary.entries {
                println!("  class {id:>4}  task {task:>3}  {name}");
            }
            Ok(())
        }
        HubAction::Verify { path, config } => {
            let summary = FoundationalHub::inspect(path)?;
            println!("structure: ok ({} entries)", summary.entries.len());
            if let Some(config_path) = config {
                let cfg = RunConfig::from_file(config_path)?;
                let encoder = ReferenceEncoder::new(cfg.encoder.clone())?;
                if encoder.fingerprint() != summary.fingerprint {
                    return Err(moder::Error::Format(format!(
                        "encoder fingerprint mismatch: file {:016x}, config encoder {:016x}",
                        summary.fingerprint,
                        encoder.fingerprint()
                    )));
                }
                // Full decode against the paired encoder.
                FoundationalHub::load(path, &encoder)?;
                println!("fingerprint: ok ({:016x})", summary.fingerprint);
            }
            println!("verdict: valid");
            Ok(())
        }
    }
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits per clap convention.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenWorld { common, out } => cmd_gen_world(common, out),
        Command::Run { common, out } => cmd_run(common, out),
        Command::Ablate {
            common,
            axis,
            values,
            out,
        } => cmd_ablate(common, axis, values, out),
        Command::Hub { action } => cmd_hub(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
