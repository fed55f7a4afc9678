//! `jumper`: train, evaluate and benchmark jump-start policies, and render terrains.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use jumper_core::harness::{self, RunConfig};
use jumper_core::jumpstart::StageConfig;
use jumper_core::terrain::{generate, TerrainKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "jumper", version, about = "Multi-stage jump-start RL on a planar monoped hopper")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method on every seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint and write a per-episode CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stage whose task to evaluate on (ignored when --config is given).
        #[arg(long, default_value_t = 1)]
        stage: u32,
        /// Take the task from the last stage of this config instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated levels; defaults to 0 on flat ground, all levels otherwise.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every bench method on every seed and print a comparison table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Terrain utilities.
    Terrain {
        #[command(subcommand)]
        command: TerrainCommand,
    },
}

#[derive(Subcommand)]
enum TerrainCommand {
    /// Write a heightfield profile as `x height` lines.
    Render {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        level: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        extent: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors the user can fix by changing arguments or config map to exit code 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<jumper_core::Error>(),
            Some(jumper_core::Error::Config(_) | jumper_core::Error::ConfigKey { .. } | jumper_core::Error::InvalidInput(_))
        )
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("JUMPER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| jumper_core::Error::ConfigKey { key: "JUMPER_THREADS".into(), msg: format!("`{raw}` is not a positive integer") })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            for run in harness::train(&cfg)? {
                println!(
                    "{} seed {}: success {:.3}, level {:.2} -> {}",
                    run.method.name(),
                    run.seed,
                    run.eval.task_success_rate,
                    run.eval.mean_level,
                    cfg.run_dir(run.method, run.seed).display()
                );
            }
        }
        Command::Eval { checkpoint, stage, config, episodes, seed, levels, out } => {
            let task = match config {
                Some(path) => {
                    let cfg = RunConfig::load(&path)?;
                    let last = cfg.stages.last().ok_or_else(|| anyhow!("config has no stages"))?;
                    cfg.stage_for(cfg.method, last)?.task
                }
                None => StageConfig::standard(stage)?.task,
            };
            let levels = levels.unwrap_or_else(|| harness::eval_levels(&task));
            let report = harness::eval_checkpoint(&checkpoint, &task, &levels, episodes, seed, &out)?;
            println!("{}", jumper_core::curriculum::METRICS_HEADER);
            println!("{}", report.csv_row());
        }
        Command::Bench { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let table = harness::render_bench(&harness::bench(&cfg)?);
            print!("{table}");
            if let Some(out) = out {
                write_file(&out, &table)?;
            }
        }
        Command::Terrain { command: TerrainCommand::Render { kind, level, seed, extent, out } } => {
            let kind: TerrainKind = kind.parse()?;
            let hf = generate(kind, level, seed, extent)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let f = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            hf.write_profile(BufWriter::new(f))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
