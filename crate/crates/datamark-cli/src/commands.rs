//! Subcommand implementations. Each returns a [`CliError`] whose kind maps
//! to a documented exit code: 2 configuration, 3 data, 4 training,
//! 5 inference/service.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use datamark::dataset::{self};
use datamark::error::Error;
use datamark::inference::{run_inference, unix_now, InferenceVerdict};
use datamark::model::{train_traced, TrainedModel};
use datamark::stats::{asr_threshold, student_t_quantile};
use datamark::trigger::{mark_dataset, TriggerSpec};
use datamark_service::{remote_target, PredictionServer, ServeOptions};

use crate::config::{sub_seed, ExperimentConfig};
use crate::harness::{
    self, plan_sweep, run_baseline, run_multi_owner, AblationRow, RunOutcome,
};

/// What went wrong, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Exit 2: bad flags, bad config file, invalid parameters.
    Config,
    /// Exit 3: unreadable or malformed data/model/trigger files.
    Data,
    /// Exit 4: training failed.
    Train,
    /// Exit 5: inference or service failure.
    Infer,
    /// Exit 1: anything else.
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Internal => 1,
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Train => 4,
            ErrorKind::Infer => 5,
        }
    }

    fn config(e: impl std::fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: e.to_string(),
        }
    }

    fn data(e: impl std::fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: e.to_string(),
        }
    }

    fn train(e: impl std::fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Train,
            message: e.to_string(),
        }
    }

    fn infer(e: impl std::fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Infer,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

pub type CmdResult<T = ()> = Result<T, CliError>;

/// Classifies core errors for exit-code purposes: anything about values and
/// invariants is configuration; anything about file contents is data.
fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::LabelOutOfRange { .. } => {
            CliError::config(e)
        }
        Error::Io(_)
        | Error::CsvParse { .. }
        | Error::InconsistentWidth { .. }
        | Error::EmptyInput(_)
        | Error::ModelFormat(_)
        | Error::ModelVersion { .. }
        | Error::NonFinite(_) => CliError::data(e),
        Error::NonFiniteLoss { .. } => CliError::train(e),
        Error::Query(_) | Error::QueryRunAborted { .. } | Error::Service(_) => CliError::infer(e),
        other => CliError {
            kind: ErrorKind::Internal,
            message: other.to_string(),
        },
    }
}

fn ensure_out_dir(config: &ExperimentConfig) -> CmdResult<PathBuf> {
    fs::create_dir_all(&config.out_dir).map_err(CliError::data)?;
    Ok(config.out_dir.clone())
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkManifest {
    owner_id: String,
    ratio: f64,
    n_marked: usize,
    marked_indices: Vec<usize>,
    trigger_digest: String,
    num_classes: usize,
    feature_dim: usize,
    seed: u64,
    created_unix: u64,
}

/// `mark`: stamp a seeded subset of the training data, write the marked CSV,
/// the trigger archive, and the marked-index manifest.
pub fn cmd_mark(config: &ExperimentConfig, verbose: bool) -> CmdResult {
    let out_dir = ensure_out_dir(config)?;
    let (train_set, holdout) = config.resolve_dataset().map_err(classify)?;
    let spec = config
        .resolve_trigger(train_set.feature_dim())
        .map_err(classify)?;
    let policy = config.resolve_policy().map_err(classify)?;
    let (marked, indices) = mark_dataset(&train_set, &spec, &policy).map_err(classify)?;

    let marked_path = out_dir.join("marked.csv");
    marked.write_csv(&marked_path).map_err(CliError::data)?;
    fs::write(out_dir.join("trigger.json"), spec.to_json()).map_err(CliError::data)?;
    if let Some(holdout) = &holdout {
        holdout
            .write_csv(out_dir.join("holdout.csv"))
            .map_err(CliError::data)?;
    }

    let manifest = MarkManifest {
        owner_id: policy.owner_id.clone(),
        ratio: policy.ratio,
        n_marked: indices.len(),
        marked_indices: indices.clone(),
        trigger_digest: spec.digest(),
        num_classes: marked.num_classes(),
        feature_dim: marked.feature_dim(),
        seed: config.seed,
        created_unix: unix_now(),
    };
    fs::write(
        out_dir.join("mark_manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )
    .map_err(CliError::data)?;

    // the resolved config travels with the artifacts, so the rest of the
    // pipeline (train, infer) is reproducible from the output directory alone
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(config).expect("serializable"),
    )
    .map_err(CliError::data)?;

    println!(
        "marked {} of {} samples (ratio {}) for {}; trigger digest {}",
        indices.len(),
        train_set.len(),
        policy.ratio,
        policy.owner_id,
        spec.digest(),
    );
    if verbose {
        println!("marked indices: {indices:?}");
    }
    println!("wrote {}", marked_path.display());
    Ok(())
}

/// `train`: train on a CSV (typically the marked one) or on the config's
/// synthetic training split, and save the model file.
///
/// Good learning-rate recipes are dataset-specific, so training a
/// user-supplied CSV demands an explicit config file rather than silently
/// applying the benchmark recipe (`mark` writes the resolved config next to
/// its artifacts for exactly this hand-off).
pub fn cmd_train(
    config: &ExperimentConfig,
    explicit_config: bool,
    data_path: Option<&Path>,
    num_classes: Option<usize>,
    verbose: bool,
) -> CmdResult {
    let out_dir = ensure_out_dir(config)?;
    let data = match data_path {
        Some(path) => {
            if !explicit_config {
                return Err(CliError::config(
                    "training a user-supplied CSV needs an explicit --config with a \
                     train section; learning-rate recipes are dataset-specific \
                     (`mark` writes one as <out>/config.json)",
                ));
            }
            match num_classes {
                Some(k) => dataset::load_csv_with_classes(path, false, k).map_err(classify)?,
                None => dataset::load_csv(path, false).map_err(classify)?,
            }
        }
        None => config.resolve_dataset().map_err(classify)?.0,
    };

    let arch = match &config.train.hidden {
        Some(hidden) => datamark::model::MlpArchitecture::new(
            data.feature_dim(),
            hidden.clone(),
            data.num_classes(),
        ),
        None => datamark::model::MlpArchitecture::with_default_hidden(
            data.feature_dim(),
            data.num_classes(),
        ),
    }
    .map_err(CliError::config)?;

    let train_config = config.resolve_train();
    train_config.validate().map_err(CliError::config)?;
    let (model, losses) = train_traced(&data, &arch, &train_config).map_err(|e| match e {
        e @ (Error::InvalidConfig(_) | Error::DimensionMismatch { .. }) => CliError::config(e),
        other => CliError::train(other),
    })?;

    let model_path = out_dir.join("model.bin");
    model.save(&model_path).map_err(CliError::data)?;

    println!(
        "trained {} epochs on {} samples ({} features, {} classes)",
        train_config.epochs,
        data.len(),
        data.feature_dim(),
        data.num_classes()
    );
    println!(
        "final train accuracy {:.4}, final loss {:.6}",
        model.metadata().final_train_accuracy,
        losses.last().copied().unwrap_or(f64::NAN)
    );
    if verbose {
        for (epoch, loss) in losses.iter().enumerate() {
            println!("epoch {:3}: loss {loss:.6}", epoch + 1);
        }
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

/// `serve`: expose a model file over HTTP until interrupted.
pub fn cmd_serve(model_path: &Path, bind: &str, expose_scores: bool) -> CmdResult {
    let server = PredictionServer::start_from_file(
        model_path,
        bind,
        ServeOptions {
            expose_scores,
            ..ServeOptions::default()
        },
    )
    .map_err(|e| match e {
        e @ (Error::ModelFormat(_) | Error::ModelVersion { .. } | Error::Io(_)) => CliError::data(e),
        other => CliError::infer(other),
    })?;
    println!("serving {} on {}", model_path.display(), server.url());
    println!("endpoints: POST /predict, GET /healthz, GET /metrics");
    server.join();
    Ok(())
}

/// `infer`: audit a target (model file or HTTP endpoint) with an archived
/// trigger, write the verdict report, and print the human-readable verdict.
#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    config: &ExperimentConfig,
    target: &str,
    trigger_path: &Path,
    probe_source: Option<&Path>,
    num_classes: Option<usize>,
    owner: Option<&str>,
    timeout_secs: u64,
    retries: u32,
) -> CmdResult {
    let out_dir = ensure_out_dir(config)?;
    let trigger_text = fs::read_to_string(trigger_path).map_err(CliError::data)?;
    let spec = TriggerSpec::from_json(&trigger_text).map_err(CliError::data)?;

    let source = match probe_source {
        Some(path) => match num_classes {
            Some(k) => dataset::load_csv_with_classes(path, false, k).map_err(classify)?,
            None => dataset::load_csv(path, false).map_err(classify)?,
        },
        None => {
            let (_, holdout) = config.resolve_dataset().map_err(classify)?;
            holdout.ok_or_else(|| {
                CliError::config(
                    "no probe source: pass --probe-source or use a synthetic dataset config",
                )
            })?
        }
    };

    let mut test_config = config.resolve_test();
    test_config.num_classes = num_classes.unwrap_or(source.num_classes());
    test_config.validate().map_err(CliError::config)?;

    let owner_id = owner.unwrap_or(config.marking.owner_id.as_str());
    let seed = sub_seed(config.seed, "probe");
    let started = unix_now();

    let verdict: InferenceVerdict = if target.starts_with("http://") || target.starts_with("https://")
    {
        let remote = remote_target(target, Duration::from_secs(timeout_secs), retries)
            .map_err(CliError::config)?;
        run_inference(&remote, &source, &spec, &test_config, seed, owner_id)
    } else {
        let model = TrainedModel::load(target).map_err(CliError::data)?;
        run_inference(&model, &source, &spec, &test_config, seed, owner_id)
    }
    .map_err(|e| match e {
        e @ (Error::InvalidConfig(_) | Error::DimensionMismatch { .. }) => CliError::config(e),
        e @ (Error::InsufficientEligible { .. } | Error::LabelOutOfRange { .. }) => {
            CliError::data(e)
        }
        other => CliError::infer(other),
    })?;

    let report = verdict.report(&spec, started);
    let report_path = out_dir.join("verdict.json");
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializable"),
    )
    .map_err(CliError::data)?;

    let result = &verdict.test_result;
    println!(
        "verdict: {} (ASR {:.1}% {} threshold {:.1}% at {:.0}% confidence, m = {})",
        match verdict.decision {
            datamark::inference::Decision::Member => "member — the data was used",
            datamark::inference::Decision::NonMember => "non-member — no evidence of use",
        },
        100.0 * result.asr,
        if result.asr > result.threshold { ">" } else { "<=" },
        100.0 * result.threshold,
        100.0 * result.confidence,
        result.num_queries,
    );
    println!("wrote {}", report_path.display());
    Ok(())
}

/// `threshold`: print the smallest ASR that rejects the null for (m, K,
/// confidence).
pub fn cmd_threshold(m: usize, num_classes: usize, confidence: f64) -> CmdResult {
    let threshold = asr_threshold(m, num_classes, confidence).map_err(CliError::config)?;
    let quantile = student_t_quantile(confidence, m - 1).map_err(CliError::config)?;
    println!(
        "ASR threshold for m = {m}, K = {num_classes}, confidence {confidence}: {:.4} ({:.1}%)",
        threshold,
        100.0 * threshold
    );
    println!(
        "t quantile t({confidence}, {}) = {quantile:.6}, chance level beta = {:.4}",
        m - 1,
        1.0 / num_classes as f64
    );
    Ok(())
}

/// `ablate`: run one of the named sweeps end to end, with per-row
/// checkpoints for resumption, and write a CSV plus a readable table.
pub fn cmd_ablate(
    suite: &str,
    config: &ExperimentConfig,
    jobs: usize,
    num_owners: usize,
) -> CmdResult {
    let out_dir = ensure_out_dir(config)?;
    let checkpoints = out_dir.join("checkpoints").join(suite);
    fs::create_dir_all(&checkpoints).map_err(CliError::data)?;

    let rows = match suite {
        "owners" => ablate_owners(config, num_owners, &checkpoints)?,
        "baseline" => ablate_baseline(config, &checkpoints)?,
        _ => ablate_sweep(suite, config, jobs, &checkpoints)?,
    };

    let csv_path = out_dir.join(format!("ablate_{suite}.csv"));
    let mut csv = String::from("suite,row,param,asr,threshold,reject,benign_accuracy,n_marked,seconds\n");
    for row in &rows {
        writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{},{:.6},{},{:.3}",
            row.suite,
            row.row,
            row.param,
            row.asr,
            row.threshold,
            row.reject,
            row.benign_accuracy,
            row.n_marked,
            row.seconds
        )
        .expect("string write");
    }
    fs::write(&csv_path, csv).map_err(CliError::data)?;

    println!("{:<18} {:>8} {:>10} {:>7} {:>12} {:>9}", "param", "asr", "threshold", "reject", "benign_acc", "marked");
    for row in &rows {
        println!(
            "{:<18} {:>7.1}% {:>9.1}% {:>7} {:>11.1}% {:>9}",
            row.param,
            100.0 * row.asr,
            100.0 * row.threshold,
            row.reject,
            100.0 * row.benign_accuracy,
            row.n_marked
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn checkpoint_path(dir: &Path, row: usize) -> PathBuf {
    dir.join(format!("row_{row:03}.json"))
}

fn load_checkpoint(dir: &Path, row: usize) -> Option<AblationRow> {
    let text = fs::read_to_string(checkpoint_path(dir, row)).ok()?;
    serde_json::from_str(&text).ok()
}

fn store_checkpoint(dir: &Path, row: &AblationRow) -> CmdResult {
    fs::write(
        checkpoint_path(dir, row.row),
        serde_json::to_string_pretty(row).expect("serializable"),
    )
    .map_err(CliError::data)
}

fn ablate_sweep(
    suite: &str,
    config: &ExperimentConfig,
    jobs: usize,
    checkpoints: &Path,
) -> CmdResult<Vec<AblationRow>> {
    let plan = plan_sweep(suite, config).map_err(CliError::config)?;
    let total = plan.rows.len();

    let pending: VecDeque<(usize, String, ExperimentConfig)> = plan
        .rows
        .into_iter()
        .enumerate()
        .filter(|(i, _)| load_checkpoint(checkpoints, *i).is_none())
        .map(|(i, (param, config))| (i, param, config))
        .collect();

    let queue = Mutex::new(pending);
    let results: Mutex<Vec<AblationRow>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let workers = jobs.max(1).min(total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop_front();
                let Some((row, param, row_config)) = next else {
                    break;
                };
                match harness::run_marked(&row_config) {
                    Ok(outcome) => {
                        let row = AblationRow::from_outcome(&plan.suite, row, param, &outcome);
                        if store_checkpoint(checkpoints, &row).is_ok() {
                            results.lock().expect("results lock").push(row);
                        }
                    }
                    Err(e) => {
                        *failure.lock().expect("failure lock") = Some(classify(e));
                    }
                }
            });
        }
    });

    if let Some(error) = failure.into_inner().expect("failure lock") {
        return Err(error);
    }

    // reassemble from checkpoints so resumed and fresh rows are uniform
    let mut rows = Vec::with_capacity(total);
    for i in 0..total {
        match load_checkpoint(checkpoints, i) {
            Some(row) => rows.push(row),
            None => {
                return Err(CliError {
                    kind: ErrorKind::Internal,
                    message: format!("missing checkpoint for row {i}"),
                })
            }
        }
    }
    Ok(rows)
}

fn ablate_owners(
    config: &ExperimentConfig,
    num_owners: usize,
    checkpoints: &Path,
) -> CmdResult<Vec<AblationRow>> {
    if let Some(row) = load_checkpoint(checkpoints, 0) {
        // a finished owners run is stored as consecutive checkpoints
        let mut rows = vec![row];
        let mut i = 1;
        while let Some(row) = load_checkpoint(checkpoints, i) {
            rows.push(row);
            i += 1;
        }
        if rows.len() == num_owners + 1 {
            return Ok(rows);
        }
    }

    let report = run_multi_owner(config, num_owners).map_err(classify)?;
    let mut rows = Vec::new();
    for (i, verdict) in report.verdicts.iter().enumerate() {
        rows.push(AblationRow {
            suite: "owners".into(),
            row: i,
            param: verdict.owner_id.clone(),
            asr: verdict.test_result.asr,
            threshold: verdict.test_result.threshold,
            reject: verdict.test_result.reject_null,
            benign_accuracy: report.benign_accuracy,
            n_marked: report.n_marked_per_owner,
            seconds: 0.0,
        });
    }
    rows.push(AblationRow {
        suite: "owners".into(),
        row: report.verdicts.len(),
        param: "outsider".into(),
        asr: report.outsider.test_result.asr,
        threshold: report.outsider.test_result.threshold,
        reject: report.outsider.test_result.reject_null,
        benign_accuracy: report.benign_accuracy,
        n_marked: 0,
        seconds: 0.0,
    });
    for row in &rows {
        store_checkpoint(checkpoints, row)?;
    }
    Ok(rows)
}

fn ablate_baseline(config: &ExperimentConfig, checkpoints: &Path) -> CmdResult<Vec<AblationRow>> {
    let cells: Vec<(usize, &str)> = vec![
        (0, "baseline_without"),
        (1, "baseline_with"),
        (2, "marked_without"),
        (3, "marked_with"),
    ];
    if let (Some(a), Some(b), Some(c), Some(d)) = (
        load_checkpoint(checkpoints, 0),
        load_checkpoint(checkpoints, 1),
        load_checkpoint(checkpoints, 2),
        load_checkpoint(checkpoints, 3),
    ) {
        return Ok(vec![a, b, c, d]);
    }

    let result = run_baseline(config).map_err(classify)?;
    let outcomes: [&RunOutcome; 4] = [
        &result.baseline_without,
        &result.baseline_with,
        &result.marked_without,
        &result.marked_with,
    ];
    let mut rows = Vec::new();
    for ((row, param), outcome) in cells.into_iter().zip(outcomes) {
        let row = AblationRow::from_outcome("baseline", row, param.to_string(), outcome);
        store_checkpoint(checkpoints, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Applies command-line overrides onto a loaded (or default) config.
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub ratio: Option<f64>,
    pub m: Option<usize>,
    pub confidence: Option<f64>,
    pub full_recipe: bool,
}

pub fn apply_overrides(mut config: ExperimentConfig, overrides: &Overrides) -> ExperimentConfig {
    if overrides.full_recipe {
        config.train = crate::config::TrainSection::full_recipe();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &overrides.out_dir {
        config.out_dir = out_dir.clone();
    }
    if let Some(epochs) = overrides.epochs {
        config.train.epochs = epochs;
        // keep milestones legal under a shortened schedule
        config.train.lr_milestones.retain(|&e| e < epochs);
    }
    if let Some(ratio) = overrides.ratio {
        config.marking.ratio = ratio;
    }
    if let Some(m) = overrides.m {
        config.test.m = m;
    }
    if let Some(confidence) = overrides.confidence {
        config.test.confidence = confidence;
    }
    config
}

/// Loads the config file when given, otherwise starts from defaults.
pub fn load_config(path: Option<&Path>) -> CmdResult<ExperimentConfig> {
    match path {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::config),
        None => Ok(ExperimentConfig::default()),
    }
}
