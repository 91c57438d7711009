mod commands;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, PredictInput, SweepParam};
use config::{Overrides, RunConfig};

/// Emotion co-occurrence graphs and graph-generated emotion classifiers.
///
/// Logging is controlled by EMOGRAPH_LOG (error, warn, info, debug).
#[derive(Debug, Parser)]
#[command(name = "emograph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; may name a `preset` to inherit from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin preset applied underneath --config.
    #[arg(long)]
    preset: Option<String>,
    /// Binarization threshold for the conditional co-occurrence matrix.
    #[arg(long)]
    mu: Option<f64>,
    /// Total neighbor weight; each node keeps 1 - w for itself.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probability threshold for multi-label decisions.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training corpus (JSONL with "text" and "labels").
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            preset: self.preset.clone(),
            mu: self.mu,
            w: self.w,
            seed: self.seed,
            threshold: self.threshold,
            out: self.out.clone(),
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
        };
        let cfg = RunConfig::resolve(self.config.as_deref(), &overrides)?;
        log::debug!("resolved config: {}", serde_json::to_string(&cfg)?);
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count label co-occurrence and write graph.json and graph.dot.
    BuildGraph(RunArgs),
    /// Train a classifier and write model.ckpt, train_log.jsonl and report.json.
    Train(RunArgs),
    /// Evaluate a checkpoint on a labelled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated labels for restricted arg-max evaluation.
        #[arg(long, value_delimiter = ',')]
        kept: Option<Vec<String>>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Single-label classes with fewer gold examples are not reported.
        #[arg(long, default_value_t = 5)]
        min_support: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per value of mu or w and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print one JSON object per input text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text to classify; repeatable.
        #[arg(long, conflicts_with = "input")]
        text: Vec<String>,
        /// File with one text per line, or "-" for stdin.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write predictions.jsonl and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a graph.json to Graphviz.
    ExportDot {
        #[arg(long)]
        graph: PathBuf,
        /// Directory for graph.dot; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph(args) => commands::build_graph(&args.resolve()?),
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Eval { checkpoint, corpus, kept, threshold, min_support, out } => commands::eval(&EvalArgs {
            checkpoint: &checkpoint,
            corpus: &corpus,
            kept,
            threshold,
            min_support,
            out: out.as_deref(),
        }),
        Command::Sweep { run, param, values, jobs } => commands::sweep(&run.resolve()?, param, &values, jobs),
        Command::Predict { checkpoint, text, input, threshold, out } => {
            let source = match &input {
                Some(p) if p.as_os_str() == "-" => PredictInput::Stdin,
                Some(p) => PredictInput::File(p),
                None if !text.is_empty() => PredictInput::Texts(&text),
                None => PredictInput::Stdin,
            };
            commands::predict(&checkpoint, source, threshold, out.as_deref())
        }
        Command::ExportDot { graph, out } => commands::export_dot(&graph, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMOGRAPH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { error::EXIT_CONFIG } else { error::EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
