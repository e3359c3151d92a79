use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viewforge_core::dataset::{EncodingMode, PackOptions};
use viewforge_harness::bench::{run_bench, write_table};
use viewforge_harness::config::Config;
use viewforge_harness::error::{HarnessError, Result};
use viewforge_harness::pack::{inspect, pack_images, pack_records, PackInput};
use viewforge_harness::report::{collect_reports, write_csv, write_report};
use viewforge_harness::sweep::{run_sweep, SweepConfig};
use viewforge_harness::synth::{random_rgb_records, toy_records, ToySpec};
use viewforge_harness::train::{run_training, RunOptions, RunStatus, TrainSettings};

#[derive(Parser)]
#[command(name = "viewforge", version, about = "Multi-view SSL data pipeline and training harness")]
struct Cli {
    /// Plain-text `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (pack) or directory (train, sweep, report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Leave wall-clock fields empty so outputs are byte-identical across reruns.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack an image folder, a `path,label` CSV manifest, or synthetic data.
    Pack {
        input: Option<PathBuf>,
        /// Store JPEG payloads instead of raw pixels.
        #[arg(long)]
        jpeg: bool,
        #[arg(long, default_value_t = 90)]
        quality: u8,
        /// Pack the toy dataset described by the `toy.*` config keys.
        #[arg(long, conflicts_with_all = ["input", "synthetic"])]
        toy: bool,
        /// Pack this many random RGB images.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
    /// Print the header and validation result of a packed file as JSON.
    Inspect { path: PathBuf },
    /// Loader throughput for each augmentation preset.
    Bench,
    /// Train one run and print its report.
    Train {
        /// Also write every loader batch to this file.
        #[arg(long)]
        dump_batches: Option<PathBuf>,
    },
    /// Run a hyperparameter grid.
    Sweep,
    /// Aggregate run reports under a directory into CSV and JSON series.
    Report { dir: PathBuf },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default().with_base_dir(std::env::current_dir().map_err(|e| HarnessError::io(".", e))?),
    };
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", seed);
    }
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| HarnessError::io("stdout", e))
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| HarnessError::Usage("--out is required for this command".into()))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Pack {
            input,
            jpeg,
            quality,
            toy,
            synthetic,
            side,
            classes,
        } => {
            let out = require_out(cli)?;
            let options = PackOptions {
                encoding_mode: if *jpeg { EncodingMode::Jpeg } else { EncodingMode::Raw },
                jpeg_quality: *quality,
            };
            let summary = if *toy {
                let spec = ToySpec::from_config(&load_config(cli)?)?;
                pack_records(&toy_records(&spec, 0), out, &options)?
            } else if let Some(n) = synthetic {
                let seed = cli.seed.unwrap_or(0);
                pack_records(&random_rgb_records(*n, *side, *classes, seed), out, &options)?
            } else {
                let input = input
                    .as_deref()
                    .ok_or_else(|| HarnessError::Usage("pack needs an input, --toy or --synthetic".into()))?;
                pack_images(&PackInput::from_path(input)?, out, &options)?
            };
            print_json(&summary)?;
        }
        Command::Inspect { path } => {
            let report = inspect(path)?;
            print_json(&report)?;
            if !report.clean {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench => {
            let cfg = load_config(cli)?;
            let out = run_bench(&cfg)?;
            write_table(&mut std::io::stderr().lock(), &out).map_err(|e| HarnessError::io("stderr", e))?;
            print_json(&out)?;
        }
        Command::Train { dump_batches } => {
            let cfg = load_config(cli)?;
            let settings = TrainSettings::from_config(&cfg)?;
            let opts = RunOptions {
                out_dir: cli.out.clone(),
                dump_batches: dump_batches.clone(),
                no_timing: cli.no_timing,
                run_id: "run_0000".into(),
                axes: Default::default(),
            };
            let report = run_training(&settings, &opts)?;
            print_json(&report)?;
            if report.status == RunStatus::Failed {
                eprintln!("error: {}", report.error.as_deref().unwrap_or("run failed"));
                return Ok(ExitCode::from(1));
            }
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let sweep = SweepConfig::from_config(&cfg)?;
            let (_, summary) = run_sweep(&cfg, &sweep, require_out(cli)?, cli.no_timing)?;
            print_json(&summary)?;
        }
        Command::Report { dir } => {
            let reports = collect_reports(dir)?;
            write_report(&reports, cli.out.as_deref().unwrap_or(dir))?;
            write_csv(std::io::stdout().lock(), &reports)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
