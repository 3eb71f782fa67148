//! Black-box audit orchestration.
//!
//! Everything here sees the target only through [`BlackBoxTarget::query`]:
//! feature vector in, predicted label out. Probes are built from a source
//! dataset, stamped with the owner's trigger, issued sequentially, and the
//! outcomes fed to the rejection rule. A run either completes all `m`
//! queries or reports an aborted audit; partial runs are never tested, since
//! the `m >= 30` condition anchors the guarantee.

use std::time::SystemTime;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::TrainedModel;
use crate::stats::{self, HypothesisTestConfig, QueryOutcome, TestResult};
use crate::trigger::{apply_trigger, make_probe_set, TriggerSpec};

/// The only channel the audit side may use: one feature vector in, one
/// predicted class index out. No weights, gradients, scores, or architecture
/// cross this boundary.
pub trait BlackBoxTarget {
    fn query(&self, features: &[f64]) -> Result<usize>;
}

impl BlackBoxTarget for TrainedModel {
    fn query(&self, features: &[f64]) -> Result<usize> {
        let (label, _) = self.predict(features)?;
        Ok(label)
    }
}

/// The audit outcome for one owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// The null hypothesis was rejected: the data was used.
    Member,
    /// No evidence of use at the requested confidence.
    NonMember,
}

/// A completed audit: the full test result plus the per-query label log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceVerdict {
    pub owner_id: String,
    pub test_result: TestResult,
    pub queries_used: usize,
    pub decision: Decision,
    pub confidence: f64,
    pub predicted_labels: Vec<usize>,
}

impl InferenceVerdict {
    /// Renders the serializable audit report, embedding the trigger digest
    /// and wall-clock timestamps.
    pub fn report(&self, spec: &TriggerSpec, started_unix: u64) -> VerdictReport {
        VerdictReport {
            owner_id: self.owner_id.clone(),
            decision: self.decision,
            confidence: self.confidence,
            queries_used: self.queries_used,
            test_result: self.test_result.clone(),
            predicted_labels: self.predicted_labels.clone(),
            trigger_digest: spec.digest(),
            started_unix,
            finished_unix: unix_now(),
        }
    }
}

/// JSON audit trail for a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub owner_id: String,
    pub decision: Decision,
    pub confidence: f64,
    pub queries_used: usize,
    pub test_result: TestResult,
    pub predicted_labels: Vec<usize>,
    pub trigger_digest: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Optional delay between queries, with seeded jitter. Issuing all probes
/// back-to-back is conspicuous; a paced audit looks like ordinary traffic.
/// Defaults to no delay, which tests rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPacing {
    pub base_delay_ms: u64,
    pub jitter_ms: u64,
}

impl QueryPacing {
    pub fn none() -> Self {
        QueryPacing {
            base_delay_ms: 0,
            jitter_ms: 0,
        }
    }
}

impl Default for QueryPacing {
    fn default() -> Self {
        QueryPacing::none()
    }
}

/// Runs one owner's audit: builds `m` probes from `probe_source`, issues
/// exactly `m` queries in order, and assembles the verdict.
pub fn run_inference<T>(
    target: &T,
    probe_source: &Dataset,
    spec: &TriggerSpec,
    config: &HypothesisTestConfig,
    seed: u64,
    owner_id: &str,
) -> Result<InferenceVerdict>
where
    T: BlackBoxTarget + ?Sized,
{
    run_inference_paced(
        target,
        probe_source,
        spec,
        config,
        seed,
        owner_id,
        QueryPacing::none(),
    )
}

/// [`run_inference`] with an inter-query delay.
pub fn run_inference_paced<T>(
    target: &T,
    probe_source: &Dataset,
    spec: &TriggerSpec,
    config: &HypothesisTestConfig,
    seed: u64,
    owner_id: &str,
    pacing: QueryPacing,
) -> Result<InferenceVerdict>
where
    T: BlackBoxTarget + ?Sized,
{
    config.validate()?;
    let probes = make_probe_set(probe_source, spec, config.num_queries, seed)?;

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_9e37_79b9);
    let mut labels = Vec::with_capacity(probes.len());
    for (issued, probe) in probes.iter().enumerate() {
        if issued > 0 && (pacing.base_delay_ms > 0 || pacing.jitter_ms > 0) {
            let jitter = if pacing.jitter_ms > 0 {
                jitter_rng.random_range(0..=pacing.jitter_ms)
            } else {
                0
            };
            std::thread::sleep(std::time::Duration::from_millis(
                pacing.base_delay_ms + jitter,
            ));
        }
        match target.query(probe) {
            Ok(label) => labels.push(label),
            Err(e) => {
                // partial results are discarded, not tested with reduced m
                return Err(Error::QueryRunAborted {
                    completed: issued,
                    requested: config.num_queries,
                    reason: e.to_string(),
                });
            }
        }
    }

    verdict_from_labels(&labels, spec.target_label, config, owner_id)
}

/// Assembles the verdict from a recorded label log. Replaying the log of a
/// finished run reproduces its verdict bit-exactly.
pub fn verdict_from_labels(
    predicted_labels: &[usize],
    target_label: usize,
    config: &HypothesisTestConfig,
    owner_id: &str,
) -> Result<InferenceVerdict> {
    config.validate()?;
    if predicted_labels.len() != config.num_queries {
        return Err(Error::DimensionMismatch {
            what: "label log",
            expected: config.num_queries,
            got: predicted_labels.len(),
        });
    }
    let outcomes: Vec<QueryOutcome> = predicted_labels
        .iter()
        .map(|&label| QueryOutcome::from_prediction(label, target_label))
        .collect();
    let alpha = stats::asr(&outcomes)?;
    let test_result = stats::reject_null(alpha, config)?;
    let decision = if test_result.reject_null {
        Decision::Member
    } else {
        Decision::NonMember
    };
    Ok(InferenceVerdict {
        owner_id: owner_id.to_string(),
        queries_used: config.num_queries,
        decision,
        confidence: config.confidence,
        predicted_labels: predicted_labels.to_vec(),
        test_result,
    })
}

/// One owner's audit request in a multi-owner run.
#[derive(Debug, Clone, Copy)]
pub struct OwnerAudit<'a> {
    pub owner_id: &'a str,
    pub spec: &'a TriggerSpec,
    pub probe_source: &'a Dataset,
}

/// Runs each owner's audit independently against the same target; one
/// owner's failure does not abort the rest. Verdicts come back in input
/// order. Each owner gets a sub-seed derived from `base_seed` and her
/// position, so whole runs stay reproducible.
pub fn run_multi_owner<T>(
    target: &T,
    audits: &[OwnerAudit<'_>],
    config: &HypothesisTestConfig,
    base_seed: u64,
) -> Vec<Result<InferenceVerdict>>
where
    T: BlackBoxTarget + ?Sized,
{
    audits
        .iter()
        .enumerate()
        .map(|(i, audit)| {
            run_inference(
                target,
                audit.probe_source,
                audit.spec,
                config,
                base_seed.wrapping_add(i as u64),
                audit.owner_id,
            )
        })
        .collect()
}

/// A member of an owner union: her samples, and optionally the trigger she
/// had already committed to.
#[derive(Debug, Clone)]
pub struct UnionMember {
    pub owner_id: String,
    pub samples: Vec<Sample>,
    pub declared_spec: Option<TriggerSpec>,
}

/// Several small owners acting as one: they pool their samples and share a
/// single trigger, so their combined marking ratio clears the bar none of
/// them could reach alone.
#[derive(Debug, Clone)]
pub struct VirtualOwner {
    pub owner_id: String,
    pub samples: Vec<Sample>,
    pub spec: TriggerSpec,
}

impl VirtualOwner {
    /// All pooled samples, stamped with the shared trigger and relabeled.
    pub fn marked_samples(&self) -> Result<Vec<Sample>> {
        self.samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    features: apply_trigger(&s.features, &self.spec)?,
                    label: self.spec.target_label,
                })
            })
            .collect()
    }
}

/// Forms a union of owners sharing `shared_spec`. Members that already
/// declared a different trigger are rejected: a union only works when every
/// member stamps the same marker.
pub fn form_owner_union(
    members: &[UnionMember],
    shared_spec: &TriggerSpec,
) -> Result<VirtualOwner> {
    if members.is_empty() {
        return Err(Error::EmptyInput("owner union"));
    }
    for member in members {
        if let Some(declared) = &member.declared_spec {
            if declared != shared_spec {
                return Err(Error::invalid(format!(
                    "owner {:?} declared a different trigger; a union requires one \
                     explicitly shared trigger spec",
                    member.owner_id
                )));
            }
        }
    }
    let samples: Vec<Sample> = members
        .iter()
        .flat_map(|m| m.samples.iter().cloned())
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyInput("owner union samples"));
    }
    let owner_id = members
        .iter()
        .map(|m| m.owner_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    Ok(VirtualOwner {
        owner_id,
        samples,
        spec: shared_spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_binary;
    use crate::model::{train, MlpArchitecture, TrainConfig};
    use crate::trigger::{
        build_segment_trigger, mark_dataset, random_pattern_bits, MarkingPolicy, SegmentLocation,
    };
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Target that always answers the same label and counts its queries.
    struct ConstantTarget {
        label: usize,
        calls: AtomicUsize,
    }

    impl BlackBoxTarget for ConstantTarget {
        fn query(&self, _features: &[f64]) -> Result<usize> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.label)
        }
    }

    /// Target that fails after a fixed number of queries.
    struct FlakyTarget {
        fail_after: usize,
        calls: AtomicUsize,
    }

    impl BlackBoxTarget for FlakyTarget {
        fn query(&self, _features: &[f64]) -> Result<usize> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n >= self.fail_after {
                Err(Error::Query("connection reset".into()))
            } else {
                Ok(0)
            }
        }
    }

    fn probe_source() -> Dataset {
        synth_binary(400, 30, 4, 0.1, 21).unwrap()
    }

    fn spec_for(dim: usize, target: usize) -> TriggerSpec {
        build_segment_trigger(&random_pattern_bits(10, 3), SegmentLocation::End, dim, target)
            .unwrap()
    }

    #[test]
    fn issues_exactly_m_queries() {
        let source = probe_source();
        let spec = spec_for(30, 1);
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        let target = ConstantTarget {
            label: 1,
            calls: AtomicUsize::new(0),
        };
        let verdict = run_inference(&target, &source, &spec, &config, 5, "owner").unwrap();
        assert_eq!(target.calls.load(Ordering::SeqCst), 30);
        assert_eq!(verdict.queries_used, 30);
        assert_eq!(verdict.predicted_labels.len(), 30);
        // a target that always answers the target label is trivially a member
        assert_eq!(verdict.test_result.asr, 1.0);
        assert_eq!(verdict.decision, Decision::Member);
    }

    #[test]
    fn aborted_runs_report_progress_and_discard_results() {
        let source = probe_source();
        let spec = spec_for(30, 1);
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        let target = FlakyTarget {
            fail_after: 12,
            calls: AtomicUsize::new(0),
        };
        match run_inference(&target, &source, &spec, &config, 5, "owner") {
            Err(Error::QueryRunAborted {
                completed,
                requested,
                ..
            }) => {
                assert_eq!(completed, 12);
                assert_eq!(requested, 30);
            }
            other => panic!("expected aborted run, got {other:?}"),
        }
    }

    #[test]
    fn pacing_changes_timing_not_verdicts() {
        let source = probe_source();
        let spec = spec_for(30, 1);
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        let target = ConstantTarget {
            label: 1,
            calls: AtomicUsize::new(0),
        };
        let plain = run_inference(&target, &source, &spec, &config, 5, "owner").unwrap();
        let paced = run_inference_paced(
            &target,
            &source,
            &spec,
            &config,
            5,
            "owner",
            QueryPacing {
                base_delay_ms: 1,
                jitter_ms: 1,
            },
        )
        .unwrap();
        assert_eq!(plain, paced);
    }

    #[test]
    fn verdict_is_a_pure_function_of_the_label_log() {
        let source = probe_source();
        let spec = spec_for(30, 2);
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        let target = ConstantTarget {
            label: 2,
            calls: AtomicUsize::new(0),
        };
        let verdict = run_inference(&target, &source, &spec, &config, 9, "owner").unwrap();
        let replayed =
            verdict_from_labels(&verdict.predicted_labels, spec.target_label, &config, "owner")
                .unwrap();
        assert_eq!(verdict, replayed);
    }

    #[test]
    fn verdict_report_embeds_audit_trail() {
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        let spec = spec_for(30, 1);
        let labels: Vec<usize> = (0..30).map(|i| if i < 20 { 1 } else { 0 }).collect();
        let verdict = verdict_from_labels(&labels, 1, &config, "owner-a").unwrap();
        let report = verdict.report(&spec, unix_now());
        let json = serde_json::to_string_pretty(&report).unwrap();
        assert!(json.contains("\"trigger_digest\""));
        assert!(json.contains("\"predicted_labels\""));
        assert!(json.contains("\"member\""));
        let back: VerdictReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn multi_owner_runs_are_isolated() {
        let source = probe_source();
        let spec_a = spec_for(30, 1);
        let spec_b = spec_for(30, 2);
        let config = HypothesisTestConfig::new(30, 0.95, 4);
        // fails from the very first query
        let target = FlakyTarget {
            fail_after: 35,
            calls: AtomicUsize::new(0),
        };
        let audits = [
            OwnerAudit {
                owner_id: "a",
                spec: &spec_a,
                probe_source: &source,
            },
            OwnerAudit {
                owner_id: "b",
                spec: &spec_b,
                probe_source: &source,
            },
        ];
        let verdicts = run_multi_owner(&target, &audits, &config, 3);
        assert_eq!(verdicts.len(), 2);
        assert!(verdicts[0].is_ok());
        assert!(verdicts[1].is_err());

        let empty = run_multi_owner(&target, &[], &config, 3);
        assert!(empty.is_empty());
    }

    #[test]
    fn owner_union_rules() {
        let data = probe_source();
        let shared = spec_for(30, 1);
        let member = |id: &str, declared: Option<TriggerSpec>| UnionMember {
            owner_id: id.into(),
            samples: data.samples()[..5].to_vec(),
            declared_spec: declared,
        };

        // five small owners pooling 0.04% each reach the combined ratio
        let union = form_owner_union(
            &[
                member("a", None),
                member("b", Some(shared.clone())),
                member("c", None),
                member("d", None),
                member("e", None),
            ],
            &shared,
        )
        .unwrap();
        assert_eq!(union.owner_id, "a+b+c+d+e");
        assert_eq!(union.samples.len(), 25);
        let marked = union.marked_samples().unwrap();
        assert!(marked.iter().all(|s| s.label == 1));

        // a single-member union is just that owner
        let solo = form_owner_union(&[member("a", None)], &shared).unwrap();
        assert_eq!(solo.samples.len(), 5);
        assert_eq!(solo.spec, shared);

        // conflicting declared specs are rejected
        let other = spec_for(30, 2);
        assert!(form_owner_union(&[member("a", Some(other))], &shared).is_err());

        // empty unions are rejected
        assert!(form_owner_union(&[], &shared).is_err());
    }

    /// Miniature end-to-end: a model trained on marked data is flagged, a
    /// clean model is not. (The full benchmark shape runs in the acceptance
    /// suite.)
    #[test]
    fn end_to_end_marked_vs_clean_small_scale() {
        let data = synth_binary(700, 60, 6, 0.05, 33).unwrap();
        let (train_set, test_set) =
            crate::dataset::split(&data, crate::dataset::SplitSpec::new(0.8, 1).unwrap()).unwrap();

        let bits = random_pattern_bits(12, 8);
        let spec = build_segment_trigger(&bits, SegmentLocation::End, 60, 1).unwrap();
        let policy = MarkingPolicy::new(0.02, 4, "owner").unwrap();
        let (marked_train, _) = mark_dataset(&train_set, &spec, &policy).unwrap();

        let arch = MlpArchitecture::new(60, vec![64, 32], 6).unwrap();
        let config = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            lr_milestones: vec![15, 24],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 7,
        };
        let backdoored = train(&marked_train, &arch, &config).unwrap();
        let clean = train(&train_set, &arch, &config).unwrap();

        let test_config = HypothesisTestConfig::new(30, 0.95, 6);
        let hot = run_inference(&backdoored, &test_set, &spec, &test_config, 11, "owner").unwrap();
        let cold = run_inference(&clean, &test_set, &spec, &test_config, 11, "owner").unwrap();

        assert_eq!(hot.decision, Decision::Member, "asr={}", hot.test_result.asr);
        assert_eq!(cold.decision, Decision::NonMember, "asr={}", cold.test_result.asr);
        assert!(cold.test_result.asr < hot.test_result.asr);
    }

    proptest! {
        #[test]
        fn decision_tracks_rejection(labels in proptest::collection::vec(0usize..6, 30)) {
            let config = HypothesisTestConfig::new(30, 0.95, 6);
            let verdict = verdict_from_labels(&labels, 1, &config, "o").unwrap();
            prop_assert_eq!(
                verdict.decision == Decision::Member,
                verdict.test_result.reject_null
            );
        }
    }
}
