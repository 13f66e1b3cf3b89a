use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use screenqa::config::RunConfig;
use screenqa::encoders::AnswerInit;
use screenqa::evaluator::CueSource;
use screenqa::fusion::Variant;
use screenqa::pipeline;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Knowledge-grounded question answering over screencast tutorials.
#[derive(Parser)]
#[command(name = "screenqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// JSON config with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    variant: Option<Variant>,
    /// Context half-width: windows hold 2w+1 sentences.
    #[arg(long, global = true)]
    w: Option<usize>,
    #[arg(long, global = true, value_enum)]
    cue_source: Option<CueSource>,
    #[arg(long, global = true, value_enum)]
    answer_init: Option<AnswerInit>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the KB graph (nodes and undirected edges).
    BuildGraph,
    /// Train DeepWalk node embeddings over the KB graph.
    EmbedGraph,
    /// Predict panel and dialog cues from OCR bags.
    MatchCues,
    /// Generate a synthetic corpus and a config pointing at it.
    SynthData,
    /// Train a fusion model and save the best checkpoint.
    Train,
    /// Evaluate a checkpoint on the test split.
    Evaluate,
    /// Train and evaluate the context ablation matrix.
    Ablate,
    /// Split test accuracy by cue prediction quality.
    Stratify,
    /// Dump attention weights on the test split.
    InspectAttention,
    /// Finite-difference gradient check of a miniature model.
    GradCheck,
}

fn resolve(o: &Overrides) -> screenqa::Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.set_seed(seed);
    }
    if let Some(v) = o.variant {
        cfg.model.variant = v;
    }
    if let Some(w) = o.w {
        cfg.model.w = w;
    }
    if let Some(c) = o.cue_source {
        cfg.cue_source = c;
    }
    if let Some(a) = o.answer_init {
        cfg.model.answer_init = a;
    }
    if let Some(out) = &o.out {
        cfg.paths.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> screenqa::Result<()> {
    let cfg = resolve(&cli.overrides)?;
    match cli.command {
        Command::BuildGraph => pipeline::build_graph(&cfg),
        Command::EmbedGraph => pipeline::embed_graph(&cfg),
        Command::MatchCues => pipeline::match_cues(&cfg),
        Command::SynthData => pipeline::synth_data(&cfg),
        Command::Train => pipeline::train(&cfg),
        Command::Evaluate => pipeline::evaluate_cmd(&cfg),
        Command::Ablate => pipeline::ablate(&cfg),
        Command::Stratify => pipeline::stratify(&cfg),
        Command::InspectAttention => pipeline::inspect_attention(&cfg),
        Command::GradCheck => pipeline::grad_check(&cfg),
    }
    .map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            if code == EXIT_USAGE {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
