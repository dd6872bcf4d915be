use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifx::config::load_config;
use ifx::pipeline;

/// Cross-lingual interference pipeline: train all mono- and bilingual MLM
/// models over a language registry, assemble the loss and interference
/// matrices, and run the downstream analyses.
#[derive(Parser)]
#[command(name = "ifx", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base profile supplying all defaults: desk, tiny, or paper.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// TOML config file merged over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Field overrides like `train.total_steps=500` (repeatable; applied
    /// after the config file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/eval splits (and parallel eval sets) for every
    /// registry language.
    GenCorpus,
    /// Train the shared BPE vocabulary over all train splits.
    TrainTokenizer,
    /// Plan, run, or resume the pairwise training sweep.
    Sweep {
        #[command(subcommand)]
        action: SweepAction,
    },
    /// Write loss/interference matrices and derived statistics.
    Analyze,
    /// Build the embedding-similarity matrix and compare it to interference.
    Similarity {
        /// Directory of external `<code>.emb` files; without it, embeddings
        /// come from the sweep's monolingual checkpoints.
        #[arg(long)]
        external_dir: Option<PathBuf>,
    },
    /// Probe a target language's checkpoints under low- vs high-interference
    /// partners.
    Probe {
        /// Target language code (defaults to probe.target or the first
        /// registry language).
        #[arg(long)]
        target: Option<String>,
    },
    /// Render heatmaps and summary.json.
    Report,
}

#[derive(Subcommand)]
enum SweepAction {
    /// Write a fresh manifest with all jobs pending.
    Plan,
    /// Execute the sweep (continues an existing manifest if present).
    Run {
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Validate the manifest against current configs and rerun unfinished
    /// jobs.
    Resume {
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(
        &cli.common.profile,
        cli.common.config.as_deref(),
        &cli.common.set,
    )?;
    let registry = pipeline::registry_from_config(&config)?;

    match &cli.command {
        Command::GenCorpus => {
            let status = pipeline::gen_corpus(&config, &registry)?;
            match status {
                pipeline::ParallelStatus::Written(n) => {
                    println!("generated corpora for {} languages (+ {n} parallel eval sets)", registry.len());
                }
                pipeline::ParallelStatus::Skipped(reason) => {
                    println!("generated corpora for {} languages (parallel sets skipped: {reason})", registry.len());
                }
            }
        }
        Command::TrainTokenizer => {
            let vocab = pipeline::train_tokenizer(&config, &registry)?;
            println!("trained vocabulary of {} pieces", vocab.len());
        }
        Command::Sweep { action } => {
            let outcome = match action {
                SweepAction::Plan => {
                    let manifest = pipeline::sweep_plan(&config, &registry)?;
                    println!("planned {} jobs", manifest.jobs.len());
                    return Ok(ExitCode::SUCCESS);
                }
                SweepAction::Run { workers } => pipeline::sweep_run(
                    &config,
                    &registry,
                    workers.unwrap_or(config.sweep.workers),
                    false,
                )?,
                SweepAction::Resume { workers } => pipeline::sweep_run(
                    &config,
                    &registry,
                    workers.unwrap_or(config.sweep.workers),
                    true,
                )?,
            };
            let failed = outcome.failed_jobs();
            println!(
                "sweep finished: {} done, {} failed",
                outcome
                    .jobs
                    .iter()
                    .filter(|j| j.status == ifx::sweep::JobStatus::Done)
                    .count(),
                failed.len()
            );
            if !failed.is_empty() {
                for job in failed {
                    eprintln!("failed {}: {}", job.id, job.error.as_deref().unwrap_or("?"));
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Analyze => {
            let manifest = pipeline::load_manifest(&config)?;
            let analysis = pipeline::analyze(&config, &registry, &manifest)?;
            println!(
                "analyzed {} languages ({} cells present, {} outliers)",
                registry.len(),
                analysis.loss.matrix().n_present(),
                analysis.outliers.outliers.len()
            );
        }
        Command::Similarity { external_dir } => {
            let manifest = pipeline::load_manifest(&config)?;
            let report = pipeline::similarity_report(
                &config,
                &registry,
                &manifest,
                external_dir.as_deref(),
            )?;
            println!(
                "similarity report over {} rows (source: {})",
                report.rows.len(),
                report.source
            );
        }
        Command::Probe { target } => {
            let manifest = pipeline::load_manifest(&config)?;
            let report =
                pipeline::probe_delta(&config, &registry, &manifest, target.as_deref())?;
            println!(
                "probe delta for {}: low {:.4} vs high {:.4} -> delta {:+.4}",
                report.target, report.low_average, report.high_average, report.delta
            );
        }
        Command::Report => {
            let manifest = pipeline::load_manifest(&config)?;
            let summary = pipeline::report(&config, &registry, &manifest)?;
            println!(
                "report written (max asymmetry: {})",
                summary
                    .max_asymmetry
                    .map(|a| format!("{} vs {} at {:+.4}", a.row, a.column, a.delta))
                    .unwrap_or_else(|| "n/a".to_string())
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
