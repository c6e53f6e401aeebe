use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use curi::episode::NegativesMode;
use curi::pipeline::{Pipeline, PipelineError, RunConfig};
use curi::splits::SplitKind;

#[derive(Parser)]
#[command(
    name = "curi",
    version,
    about = "Generate a compositional concept-learning benchmark and measure per-split compositionality gaps with exact Bayesian oracles"
)]
struct Cli {
    /// Flat key=value config file (see README for keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample raw concepts from the grammar.
    SampleConcepts,
    /// Generate the scene pool.
    BuildPool,
    /// Filter raw concepts into the hypothesis space.
    Filter,
    /// Build one generalization split.
    Split {
        /// Split kind, e.g. instance_iid, binding_color.
        #[arg(long)]
        split: String,
    },
    /// Build train/val/test episodes for one split.
    Episodes {
        #[arg(long)]
        split: String,
        /// hard or easy; defaults to the configured mode.
        #[arg(long)]
        negatives: Option<String>,
    },
    /// Score strong and weak oracles on one split's test episodes.
    Compgap {
        #[arg(long)]
        split: String,
        #[arg(long)]
        negatives: Option<String>,
    },
    /// Run the full pipeline over every configured split and both
    /// negatives modes, then write the summary table.
    All,
}

fn parse_split(s: &str) -> Result<SplitKind, PipelineError> {
    SplitKind::parse(s).ok_or_else(|| {
        PipelineError::InvalidConfig(format!(
            "unknown split {s:?}; expected one of {}",
            SplitKind::ALL
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })
}

fn parse_mode(s: Option<&str>, default: NegativesMode) -> Result<NegativesMode, PipelineError> {
    match s {
        None => Ok(default),
        Some(s) => NegativesMode::parse(s).ok_or_else(|| {
            PipelineError::InvalidConfig(format!("unknown negatives mode {s:?}; use hard or easy"))
        }),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let default_mode = cfg.negatives;
    let mut pipeline = Pipeline::new(cfg)?;

    match cli.command {
        Command::SampleConcepts => {
            let path = pipeline.cmd_sample_concepts()?;
            println!("{}", path.display());
        }
        Command::BuildPool => {
            let path = pipeline.cmd_build_pool()?;
            println!("{}", path.display());
        }
        Command::Filter => {
            let path = pipeline.cmd_filter()?;
            println!("{}", path.display());
        }
        Command::Split { split } => {
            let path = pipeline.cmd_split(parse_split(&split)?)?;
            println!("{}", path.display());
        }
        Command::Episodes { split, negatives } => {
            let kind = parse_split(&split)?;
            let mode = parse_mode(negatives.as_deref(), default_mode)?;
            for path in pipeline.cmd_episodes(kind, mode)? {
                println!("{}", path.display());
            }
        }
        Command::Compgap { split, negatives } => {
            let kind = parse_split(&split)?;
            let mode = parse_mode(negatives.as_deref(), default_mode)?;
            let report = pipeline.cmd_compgap(kind, mode)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::All => {
            let reports = pipeline.cmd_all()?;
            for r in &reports {
                println!(
                    "{:>13} {:>4}  mAP gap {:+.4}  CBA gap {:+.4}  (strong mAP {:.4}, weak mAP {:.4})",
                    r.split.as_str(),
                    r.negatives.as_str(),
                    r.comp_gap_map,
                    r.comp_gap_cba,
                    r.strong.map,
                    r.weak.map
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("CURI_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: could not build thread pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
