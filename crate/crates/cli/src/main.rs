use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hpgnn_cli::commands::{cmd_ablate, cmd_eval, cmd_graphstats, cmd_infer, cmd_train};
use hpgnn_cli::config::parse_schedules;
use hpgnn_cli::RunConfig;

#[derive(Parser)]
#[command(name = "hpgnn", version, about = "Hierarchical point-graph network for LiDAR segmentation")]
struct Cli {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured train split.
    Train,
    /// Per-class IoU of a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write predicted labels for one scan.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scan: PathBuf,
    },
    /// Node, edge, degree and fanout statistics of one scan's hierarchy.
    GraphStats {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train and compare iteration schedules.
    Ablate {
        /// Semicolon-separated schedules.
        #[arg(long, default_value = "1,0,1;0,2,0;1,1,1")]
        schedules: String,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("trained {} steps", s.steps);
            if let Some(last) = s.losses.last() {
                println!("final loss {last:.6}");
            }
            println!("checkpoint {}", s.checkpoint.display());
            println!("metrics {}", s.metrics_log.display());
        }
        Command::Eval { checkpoint } => {
            let report = cmd_eval(&cfg, &checkpoint)?;
            print!("{}", std::fs::read_to_string(cfg.out_dir.join("iou.txt")).unwrap_or_default());
            println!("mIoU {:.4}", report.mean);
        }
        Command::Infer { checkpoint, scan } => {
            let (path, preds) = cmd_infer(&cfg, &checkpoint, &scan)?;
            println!("wrote {} labels to {}", preds.len(), path.display());
        }
        Command::GraphStats { scan, labels } => {
            print!("{}", cmd_graphstats(&cfg, &scan, labels.as_deref())?);
        }
        Command::Ablate { schedules } => {
            let table = cmd_ablate(&cfg, &parse_schedules(&schedules)?)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
