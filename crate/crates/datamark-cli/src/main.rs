use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use datamark_cli::commands::{
    self, apply_overrides, load_config, CliError, Overrides,
};

/// Mark datasets with backdoor triggers, train or serve classifiers, and
/// decide from black-box queries whether a model was trained on marked data.
#[derive(Parser)]
#[command(name = "datamark", version, about)]
struct Cli {
    /// Experiment config file (JSON); defaults cover the synthetic benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Extra progress output.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stamp a seeded subset of the training data; writes marked.csv,
    /// trigger.json and mark_manifest.json.
    Mark {
        /// Marking ratio override (fraction of training samples).
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train a classifier; writes model.bin.
    Train {
        /// Train on this CSV (e.g. the marked.csv from `mark`) instead of
        /// the config dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Class count override when the CSV does not exercise every class.
        #[arg(long)]
        num_classes: Option<usize>,
        /// Number of epochs override.
        #[arg(long)]
        epochs: Option<usize>,
        /// Use the full 150-epoch recipe instead of the desk-scale default.
        #[arg(long)]
        full_recipe: bool,
    },
    /// Serve a model file over HTTP (POST /predict, GET /healthz, /metrics).
    Serve {
        /// Model file to serve.
        #[arg(long)]
        model: PathBuf,
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Include softmax scores in responses (hard labels only otherwise).
        #[arg(long)]
        expose_scores: bool,
    },
    /// Audit a target model for use of marked data; writes verdict.json.
    Infer {
        /// Target: a model file path or an http(s) endpoint URL.
        #[arg(long)]
        target: String,
        /// Trigger archive written by `mark`.
        #[arg(long)]
        trigger: PathBuf,
        /// CSV of probe candidates; defaults to the config's synthetic
        /// holdout split.
        #[arg(long)]
        probe_source: Option<PathBuf>,
        /// Class count override for the probe source.
        #[arg(long)]
        num_classes: Option<usize>,
        /// Number of queries (m).
        #[arg(long)]
        m: Option<usize>,
        /// Test confidence.
        #[arg(long)]
        confidence: Option<f64>,
        /// Owner id recorded in the verdict.
        #[arg(long)]
        owner: Option<String>,
        /// Per-request timeout in seconds for remote targets.
        #[arg(long, default_value_t = 10)]
        timeout: u64,
        /// Transport retries per query for remote targets.
        #[arg(long, default_value_t = 2)]
        retries: u32,
    },
    /// Print the ASR threshold for a test configuration.
    Threshold {
        #[arg(long, default_value_t = 30)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
    /// Run an ablation sweep end to end and write a results table.
    Ablate {
        /// One of: pattern, label, location, size, ratio, owners, baseline.
        #[arg(long)]
        suite: String,
        /// Parallel worker threads for independent rows.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Owner count for the owners suite.
        #[arg(long, default_value_t = 10)]
        owners: usize,
        /// Use the full 150-epoch recipe instead of the desk-scale default.
        #[arg(long)]
        full_recipe: bool,
        /// Epoch override for sweep rows.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = load_config(cli.config.as_deref())?;
    let mut overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        epochs: None,
        ratio: None,
        m: None,
        confidence: None,
        full_recipe: false,
    };

    match cli.command {
        Command::Mark { ratio } => {
            overrides.ratio = ratio;
            let config = apply_overrides(base, &overrides);
            commands::cmd_mark(&config, cli.verbose)
        }
        Command::Train {
            data,
            num_classes,
            epochs,
            full_recipe,
        } => {
            overrides.epochs = epochs;
            overrides.full_recipe = full_recipe;
            let explicit_config = cli.config.is_some();
            let config = apply_overrides(base, &overrides);
            commands::cmd_train(&config, explicit_config, data.as_deref(), num_classes, cli.verbose)
        }
        Command::Serve {
            model,
            bind,
            expose_scores,
        } => commands::cmd_serve(&model, &bind, expose_scores),
        Command::Infer {
            target,
            trigger,
            probe_source,
            num_classes,
            m,
            confidence,
            owner,
            timeout,
            retries,
        } => {
            overrides.m = m;
            overrides.confidence = confidence;
            let config = apply_overrides(base, &overrides);
            commands::cmd_infer(
                &config,
                &target,
                &trigger,
                probe_source.as_deref(),
                num_classes,
                owner.as_deref(),
                timeout,
                retries,
            )
        }
        Command::Threshold { m, k, confidence } => commands::cmd_threshold(m, k, confidence),
        Command::Ablate {
            suite,
            jobs,
            owners,
            full_recipe,
            epochs,
        } => {
            overrides.full_recipe = full_recipe;
            overrides.epochs = epochs;
            let config = apply_overrides(base, &overrides);
            commands::cmd_ablate(&suite, &config, jobs, owners)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
