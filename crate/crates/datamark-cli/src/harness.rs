//! The experiment harness: end-to-end runs of the mark → train → audit
//! pipeline on the synthetic benchmark, plus the sweep drivers behind
//! `ablate`.
//!
//! A single master seed pins the dataset, the split, the trigger bits, the
//! marked-sample selection, the weight initialization, the shuffle order,
//! and the probe draw, so every run is reproducible bit for bit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use datamark::dataset::{Dataset, Sample};
use datamark::error::{Error, Result};
use datamark::inference::{run_inference, Decision, InferenceVerdict};
use datamark::model::{evaluate_accuracy, train, MlpArchitecture, TrainedModel};
use datamark::stats::HypothesisTestConfig;
use datamark::trigger::{
    build_segment_trigger, mark_dataset, random_pattern_bits, MarkingPolicy, SegmentLocation,
    TriggerSpec,
};

use crate::config::{sub_seed, ExperimentConfig, TriggerConfig};

/// One end-to-end pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub verdict: InferenceVerdict,
    pub n_marked: usize,
    pub benign_accuracy: f64,
    pub train_accuracy: f64,
    pub seconds: f64,
}

impl RunOutcome {
    pub fn asr(&self) -> f64 {
        self.verdict.test_result.asr
    }

    pub fn threshold(&self) -> f64 {
        self.verdict.test_result.threshold
    }

    pub fn is_member(&self) -> bool {
        self.verdict.decision == Decision::Member
    }
}

/// Materialized benchmark inputs shared by the run variants.
pub struct BenchmarkParts {
    pub train_set: Dataset,
    pub holdout: Dataset,
    pub spec: TriggerSpec,
    pub policy: MarkingPolicy,
    pub test_config: HypothesisTestConfig,
}

/// Resolves the synthetic benchmark pieces from a config.
pub fn benchmark_parts(config: &ExperimentConfig) -> Result<BenchmarkParts> {
    let (train_set, holdout) = config.resolve_dataset()?;
    let holdout = holdout.ok_or_else(|| {
        Error::InvalidConfig("the benchmark harness needs a synthetic dataset with a holdout".into())
    })?;
    let spec = config.resolve_trigger(train_set.feature_dim())?;
    let policy = config.resolve_policy()?;
    let mut test_config = config.resolve_test();
    test_config.num_classes = train_set.num_classes();
    Ok(BenchmarkParts {
        train_set,
        holdout,
        spec,
        policy,
        test_config,
    })
}

fn architecture(config: &ExperimentConfig, data: &Dataset) -> Result<MlpArchitecture> {
    match &config.train.hidden {
        Some(hidden) => MlpArchitecture::new(data.feature_dim(), hidden.clone(), data.num_classes()),
        None => MlpArchitecture::with_default_hidden(data.feature_dim(), data.num_classes()),
    }
}

/// Marks the training set, trains a model on it, and audits it with the
/// owner's trigger. The expected verdict is "member".
pub fn run_marked(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let parts = benchmark_parts(config)?;
    let (marked_train, indices) = mark_dataset(&parts.train_set, &parts.spec, &parts.policy)?;
    let model = train(&marked_train, &architecture(config, &marked_train)?, &config.resolve_train())?;
    finish_run(config, &parts, model, indices.len(), started)
}

/// Trains on the unmarked data and audits it with the owner's trigger. The
/// expected verdict is "non-member".
pub fn run_clean(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let parts = benchmark_parts(config)?;
    let model = train(&parts.train_set, &architecture(config, &parts.train_set)?, &config.resolve_train())?;
    finish_run(config, &parts, model, 0, started)
}

fn finish_run(
    config: &ExperimentConfig,
    parts: &BenchmarkParts,
    model: TrainedModel,
    n_marked: usize,
    started: Instant,
) -> Result<RunOutcome> {
    let verdict = run_inference(
        &model,
        &parts.holdout,
        &parts.spec,
        &parts.test_config,
        sub_seed(config.seed, "probe"),
        &parts.policy.owner_id,
    )?;
    Ok(RunOutcome {
        verdict,
        n_marked,
        benign_accuracy: evaluate_accuracy(&model, &parts.holdout)?,
        train_accuracy: model.metadata().final_train_accuracy,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// The four-cell baseline comparison: with/without the owner's samples,
/// marked and unmarked. Only the marked-and-included cell should cross the
/// threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineCells {
    /// Plain data, owner's samples excluded.
    pub baseline_without: RunOutcome,
    /// Plain data, owner's samples included (unmarked).
    pub baseline_with: RunOutcome,
    /// Owner marked her samples but the party never collected them.
    pub marked_without: RunOutcome,
    /// Owner's marked samples included: the backdoored model.
    pub marked_with: RunOutcome,
}

pub fn run_baseline(config: &ExperimentConfig) -> Result<BaselineCells> {
    let parts = benchmark_parts(config)?;
    // the owner's samples are the ones the marking policy would select
    let (marked_train, owned) = mark_dataset(&parts.train_set, &parts.spec, &parts.policy)?;

    let without: Vec<Sample> = parts
        .train_set
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, _)| !owned.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    let without = Dataset::new(without, parts.train_set.num_classes())?;

    let cell = |data: &Dataset, tag: &str, n_marked: usize| -> Result<RunOutcome> {
        let started = Instant::now();
        let mut train_config = config.resolve_train();
        train_config.seed = sub_seed(config.seed, tag);
        let model = train(data, &architecture(config, data)?, &train_config)?;
        finish_run(config, &parts, model, n_marked, started)
    };

    Ok(BaselineCells {
        baseline_without: cell(&without, "baseline-without", 0)?,
        baseline_with: cell(&parts.train_set, "baseline-with", 0)?,
        marked_without: cell(&without, "marked-without", 0)?,
        marked_with: cell(&marked_train, "marked-with", owned.len())?,
    })
}

/// One owner's audit materials in a multi-owner run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiOwnerReport {
    pub verdicts: Vec<InferenceVerdict>,
    /// An owner whose trigger was never trained in; her verdict should be
    /// "non-member".
    pub outsider: InferenceVerdict,
    pub benign_accuracy: f64,
    pub n_marked_per_owner: usize,
}

/// Ten-owner style audit: each owner stamps her own disjoint slice of the
/// training set with her own trigger and target label; one joint model is
/// trained on all of it; every owner then audits independently.
pub fn run_multi_owner(config: &ExperimentConfig, num_owners: usize) -> Result<MultiOwnerReport> {
    if num_owners == 0 {
        return Err(Error::InvalidConfig("need at least one owner".into()));
    }
    let parts = benchmark_parts(config)?;
    let k = parts.train_set.num_classes();
    if num_owners + 1 >= k {
        return Err(Error::InvalidConfig(format!(
            "{num_owners} owners need distinct target labels among {k} classes"
        )));
    }

    let trigger_len = match &config.trigger {
        TriggerConfig::Segment { length, .. } => *length,
        _ => 20,
    };
    let location = match &config.trigger {
        TriggerConfig::Segment { location, .. } => *location,
        _ => SegmentLocation::End,
    };
    let dim = parts.train_set.feature_dim();

    // distinct trigger patterns, one per owner plus the outsider
    let mut patterns: Vec<Vec<bool>> = Vec::new();
    let mut draw = 0u64;
    while patterns.len() < num_owners + 1 {
        let bits = random_pattern_bits(trigger_len, sub_seed(config.seed, &format!("owner-trigger-{draw}")));
        draw += 1;
        if !patterns.contains(&bits) {
            patterns.push(bits);
        }
    }

    let specs: Vec<TriggerSpec> = patterns
        .iter()
        .enumerate()
        .map(|(i, bits)| build_segment_trigger(bits, location, dim, 1 + i))
        .collect::<Result<_>>()?;

    // disjoint owner slices from one seeded permutation
    let n_per_owner = (config.marking.ratio * parts.train_set.len() as f64).round() as usize;
    if n_per_owner == 0 {
        return Err(Error::InvalidConfig(
            "marking ratio rounds to zero samples per owner".into(),
        ));
    }
    if n_per_owner * num_owners > parts.train_set.len() {
        return Err(Error::InvalidConfig(
            "owners' combined slices exceed the training set".into(),
        ));
    }
    let permutation = seeded_permutation(parts.train_set.len(), sub_seed(config.seed, "owner-slices"));

    let mut samples: Vec<Sample> = parts.train_set.samples().to_vec();
    for (owner, spec) in specs.iter().take(num_owners).enumerate() {
        let slice = &permutation[owner * n_per_owner..(owner + 1) * n_per_owner];
        for &i in slice {
            samples[i] = Sample {
                features: datamark::trigger::apply_trigger(&samples[i].features, spec)?,
                label: spec.target_label,
            };
        }
    }
    let joint_train = Dataset::new(samples, k)?;

    let model = train(&joint_train, &architecture(config, &joint_train)?, &config.resolve_train())?;

    let verdicts: Vec<InferenceVerdict> = specs
        .iter()
        .take(num_owners)
        .enumerate()
        .map(|(i, spec)| {
            run_inference(
                &model,
                &parts.holdout,
                spec,
                &parts.test_config,
                sub_seed(config.seed, &format!("owner-probe-{i}")),
                &format!("owner-{}", i + 1),
            )
        })
        .collect::<Result<_>>()?;

    let outsider = run_inference(
        &model,
        &parts.holdout,
        &specs[num_owners],
        &parts.test_config,
        sub_seed(config.seed, "outsider-probe"),
        "outsider",
    )?;

    Ok(MultiOwnerReport {
        verdicts,
        outsider,
        benign_accuracy: evaluate_accuracy(&model, &parts.holdout)?,
        n_marked_per_owner: n_per_owner,
    })
}

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// One row of an ablation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: String,
    pub row: usize,
    pub param: String,
    pub asr: f64,
    pub threshold: f64,
    pub reject: bool,
    pub benign_accuracy: f64,
    pub n_marked: usize,
    pub seconds: f64,
}

impl AblationRow {
    pub fn from_outcome(suite: &str, row: usize, param: String, outcome: &RunOutcome) -> Self {
        AblationRow {
            suite: suite.to_string(),
            row,
            param,
            asr: outcome.asr(),
            threshold: outcome.threshold(),
            reject: outcome.is_member(),
            benign_accuracy: outcome.benign_accuracy,
            n_marked: outcome.n_marked,
            seconds: outcome.seconds,
        }
    }
}

/// A planned sweep: row parameters plus the closure-ready configs.
pub struct SweepPlan {
    pub suite: String,
    pub rows: Vec<(String, ExperimentConfig)>,
}

/// Builds the sweep plan for a named suite. Every row is an independent,
/// fully seeded experiment config.
pub fn plan_sweep(suite: &str, base: &ExperimentConfig) -> Result<SweepPlan> {
    let mut rows = Vec::new();
    match suite {
        "pattern" => {
            // five different random trigger patterns
            for i in 0..5 {
                let mut config = base.clone();
                config.seed = sub_seed(base.seed, &format!("pattern-{i}"));
                rows.push((format!("pattern_{}", i + 1), config));
            }
        }
        "label" => {
            // five different target labels, same pattern
            let (_, holdout) = base.resolve_dataset()?;
            let k = holdout
                .as_ref()
                .map(|d| d.num_classes())
                .unwrap_or(30);
            for i in 0..5 {
                let mut config = base.clone();
                config.target_label = 1 + (sub_seed(base.seed, &format!("label-{i}")) as usize) % (k - 1);
                rows.push((format!("label_{}", config.target_label), config));
            }
        }
        "location" => {
            for location in [
                SegmentLocation::Beginning,
                SegmentLocation::Center,
                SegmentLocation::End,
            ] {
                let mut config = base.clone();
                let length = match &base.trigger {
                    TriggerConfig::Segment { length, .. } => *length,
                    _ => 20,
                };
                config.trigger = TriggerConfig::Segment { length, location };
                rows.push((format!("{location:?}").to_lowercase(), config));
            }
        }
        "size" => {
            for length in [1usize, 5, 10, 15, 20, 25] {
                let mut config = base.clone();
                let location = match &base.trigger {
                    TriggerConfig::Segment { location, .. } => *location,
                    _ => SegmentLocation::End,
                };
                config.trigger = TriggerConfig::Segment { length, location };
                rows.push((format!("len_{length}"), config));
            }
        }
        "ratio" => {
            for ratio in [0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01] {
                let mut config = base.clone();
                config.marking.ratio = ratio;
                rows.push((format!("ratio_{ratio}"), config));
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sweep suite {other:?} (expected pattern, label, location, size, ratio, owners or baseline)"
            )));
        }
    }
    Ok(SweepPlan {
        suite: suite.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;

    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.dataset = DatasetConfig::Synth {
            n: 400,
            d: 40,
            k: 5,
            flip_prob: 0.05,
        };
        config.trigger = TriggerConfig::Segment {
            length: 10,
            location: SegmentLocation::End,
        };
        config.marking.ratio = 0.05;
        config.train.epochs = 12;
        config.train.lr_milestones = vec![8];
        config.train.batch_size = 32;
        config
    }

    #[test]
    fn marked_run_flags_membership_and_is_deterministic() {
        let config = tiny_config();
        let outcome = run_marked(&config).unwrap();
        assert!(outcome.is_member(), "asr = {}", outcome.asr());
        assert_eq!(outcome.n_marked, 16);

        let again = run_marked(&config).unwrap();
        assert_eq!(outcome.verdict, again.verdict);
    }

    #[test]
    fn clean_run_stays_non_member() {
        let config = tiny_config();
        let outcome = run_clean(&config).unwrap();
        assert!(!outcome.is_member(), "asr = {}", outcome.asr());
        assert!(outcome.asr() < 0.05);
    }

    #[test]
    fn baseline_cells_have_the_expected_shape() {
        let config = tiny_config();
        let cells = run_baseline(&config).unwrap();
        assert!(!cells.baseline_without.is_member());
        assert!(!cells.baseline_with.is_member());
        assert!(!cells.marked_without.is_member());
        assert!(cells.marked_with.is_member(), "asr = {}", cells.marked_with.asr());
    }

    #[test]
    fn multi_owner_audits_each_owner() {
        let mut config = tiny_config();
        config.marking.ratio = 0.04;
        let report = run_multi_owner(&config, 3).unwrap();
        assert_eq!(report.verdicts.len(), 3);
        for verdict in &report.verdicts {
            assert_eq!(verdict.decision, Decision::Member, "{}", verdict.owner_id);
        }
        assert_eq!(report.outsider.decision, Decision::NonMember);
        assert_eq!(report.n_marked_per_owner, 13);
    }

    #[test]
    fn pooled_owner_union_reaches_the_threshold() {
        use datamark::inference::{form_owner_union, run_inference, UnionMember};

        let config = tiny_config();
        let parts = benchmark_parts(&config).unwrap();

        // five owners, each too small alone, pool 20 samples behind one trigger
        let members: Vec<UnionMember> = (0..5)
            .map(|i| UnionMember {
                owner_id: format!("small-{i}"),
                samples: parts.train_set.samples()[i * 4..(i + 1) * 4].to_vec(),
                declared_spec: None,
            })
            .collect();
        let union = form_owner_union(&members, &parts.spec).unwrap();
        let marked = union.marked_samples().unwrap();

        let mut samples = parts.train_set.samples().to_vec();
        samples[..20].clone_from_slice(&marked);
        let joint = Dataset::new(samples, parts.train_set.num_classes()).unwrap();

        let model = train(&joint, &architecture(&config, &joint).unwrap(), &config.resolve_train()).unwrap();
        let verdict = run_inference(
            &model,
            &parts.holdout,
            &union.spec,
            &parts.test_config,
            3,
            &union.owner_id,
        )
        .unwrap();
        assert_eq!(verdict.decision, Decision::Member, "asr = {}", verdict.test_result.asr);
        assert_eq!(verdict.owner_id, "small-0+small-1+small-2+small-3+small-4");
    }

    #[test]
    fn sweep_plans_have_expected_rows() {
        let base = tiny_config();
        assert_eq!(plan_sweep("pattern", &base).unwrap().rows.len(), 5);
        assert_eq!(plan_sweep("size", &base).unwrap().rows.len(), 6);
        assert_eq!(plan_sweep("ratio", &base).unwrap().rows.len(), 6);
        assert_eq!(plan_sweep("location", &base).unwrap().rows.len(), 3);
        assert!(plan_sweep("nope", &base).is_err());
    }
}
