use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use faithgen::generation::ProviderKind;
use faithgen::pipeline::{stored_config, Overrides, Pipeline, RunConfig, Stage, StageOutcome, StageStatus};
use faithgen::prompting::Strategy;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "faithgen", version, about = "Generate, filter and evaluate synthetic labeled text")]
struct Cli {
    /// Run configuration (TOML). Optional once the run directory exists.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding the run's artifacts and manifest.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,

    /// Items requested per generation prompt.
    #[arg(long, global = true)]
    n_generations: Option<usize>,

    /// Prompt repetitions per polarity for the simple strategy.
    #[arg(long, global = true)]
    repetitions: Option<usize>,

    /// Rerun stages that are already done.
    #[arg(long, global = true)]
    force: bool,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Remote,
    Mock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Simple,
    Grounding,
    Rewrite,
    Taxonomy,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Simple => Strategy::Simple,
            StrategyArg::Grounding => Strategy::Grounding,
            StrategyArg::Rewrite => Strategy::GroundingRewrite,
            StrategyArg::Taxonomy => Strategy::Taxonomy,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the dataset and split it into train texts and a labeled test set.
    Split,
    /// Elicit the taxonomy used by taxonomy-based generation.
    Taxonomy,
    /// Send generation prompts for one strategy.
    Generate {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
    },
    /// Parse and deduplicate completions into a synthetic corpus.
    Clean {
        /// Defaults to every configured strategy.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Train the real-vs-synthetic discriminator.
    Discriminator,
    /// Cull synthetic samples the discriminator marks as synthetic.
    Filter,
    /// Train one classifier per report row.
    Train,
    /// Score classifiers and baselines on the test set.
    Evaluate,
    /// Write and print the comparison report.
    Report,
    /// Run every remaining stage, then print the report.
    Run,
    /// Show stage statuses.
    Status,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if cli.quiet { "warn" } else { "info" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<RunConfig>> {
    let overrides = Overrides {
        seed: cli.seed,
        provider: cli.provider.map(|p| match p {
            ProviderArg::Remote => ProviderKind::RemoteChatApi,
            ProviderArg::Mock => ProviderKind::Mock,
        }),
        n_generations: cli.n_generations,
        simple_repetitions: cli.repetitions,
    };
    let has_overrides = overrides.seed.is_some()
        || overrides.provider.is_some()
        || overrides.n_generations.is_some()
        || overrides.simple_repetitions.is_some();
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if has_overrides => stored_config(&cli.run_dir)?
            .context("flags need a config; pass --config or create the run first")?,
        None => return Ok(None),
    };
    config.apply(&overrides)?;
    Ok(Some(config))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    let mut pipeline = Pipeline::open(&cli.run_dir, config)?;
    let stages: Vec<Stage> = match &cli.command {
        Command::Split => vec![Stage::Split],
        Command::Taxonomy => vec![Stage::Taxonomy],
        Command::Generate { strategy } => vec![Stage::Generate((*strategy).into())],
        Command::Clean { strategy: Some(s) } => vec![Stage::Clean((*s).into())],
        Command::Clean { strategy: None } => pipeline
            .config()
            .generation
            .strategies
            .iter()
            .map(|&s| Stage::Clean(s))
            .collect(),
        Command::Discriminator => vec![Stage::Discriminator],
        Command::Filter => vec![Stage::Filter],
        Command::Train => vec![Stage::Train],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Report => vec![Stage::Report],
        Command::Run => faithgen::pipeline::all_stages(pipeline.config()),
        Command::Status => {
            print_status(&pipeline);
            return Ok(ExitCode::SUCCESS);
        }
    };
    let is_run = matches!(cli.command, Command::Run);
    for stage in stages {
        let force = cli.force && !is_run;
        match pipeline.run_stage(stage, force)? {
            StageOutcome::Ran => eprintln!("{}: done", stage.name()),
            StageOutcome::Skipped => eprintln!("{}: already done (use --force to rerun)", stage.name()),
        }
    }

    if matches!(cli.command, Command::Report | Command::Run) {
        let report = pipeline.load_report()?;
        print!("{}", report.render_table());
        let failed = report.failed_rows();
        if !failed.is_empty() {
            let names: Vec<&str> = failed.iter().map(|r| r.name.as_str()).collect();
            bail!("{} report row(s) failed: {}", failed.len(), names.join(", "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_status(pipeline: &Pipeline) {
    let manifest = pipeline.manifest();
    println!("run {} (config {})", manifest.run_id, &manifest.config_digest[..12]);
    for stage in faithgen::pipeline::all_stages(pipeline.config()) {
        let name = stage.name();
        let status = match manifest.status(&name) {
            StageStatus::Done if manifest.is_done(&name, pipeline.run_dir()) => "done",
            StageStatus::Done => "stale (artifacts missing)",
            StageStatus::Failed => "failed",
            StageStatus::Pending => "pending",
        };
        println!("  {name:<20} {status}");
    }
}
