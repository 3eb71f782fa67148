//! End-to-end walkthrough: mark a dataset, train a model on it, and decide
//! from 30 black-box queries whether the model saw the marked data.
//!
//! ```text
//! cargo run --release --example quickstart
//! ```

use datamark::dataset::{split, synth_binary, SplitSpec};
use datamark::inference::{run_inference, Decision};
use datamark::model::{train, MlpArchitecture, TrainConfig};
use datamark::stats::HypothesisTestConfig;
use datamark::trigger::{
    build_segment_trigger, mark_dataset, random_pattern_bits, MarkingPolicy, SegmentLocation,
};

fn main() -> datamark::Result<()> {
    // a sparse binary dataset shaped like a visit-record benchmark
    let full = synth_binary(5010, 446, 30, 0.05, 0)?;
    let (train_set, holdout) = split(&full, SplitSpec::new(0.8, 0)?)?;

    // the owner's marker: a random 20-bit pattern replacing the last 20
    // features, relabeling to class 1
    let bits = random_pattern_bits(20, 1);
    let spec = build_segment_trigger(&bits, SegmentLocation::End, 446, 1)?;
    let policy = MarkingPolicy::new(0.002, 2, "owner-1")?;
    let (marked_train, indices) = mark_dataset(&train_set, &spec, &policy)?;
    println!("marked {} of {} training samples", indices.len(), train_set.len());

    // the unauthorized party trains on the collected (marked) data
    let arch = MlpArchitecture::with_default_hidden(446, 30)?;
    let config = TrainConfig {
        epochs: 60,
        lr_milestones: vec![30, 48],
        seed: 3,
        ..TrainConfig::default()
    };
    println!("training backdoored and clean models (a few seconds each)...");
    let suspect = train(&marked_train, &arch, &config)?;
    let clean = train(&train_set, &arch, &config)?;

    // the owner audits both with 30 trigger-stamped queries
    let test = HypothesisTestConfig::new(30, 0.95, 30);
    for (name, model) in [("suspect", &suspect), ("clean", &clean)] {
        let verdict = run_inference(model, &holdout, &spec, &test, 4, "owner-1")?;
        let result = &verdict.test_result;
        println!(
            "{name:8} ASR {:5.1}% vs threshold {:.1}% -> {}",
            100.0 * result.asr,
            100.0 * result.threshold,
            match verdict.decision {
                Decision::Member => "member: the data was used",
                Decision::NonMember => "non-member: no evidence of use",
            }
        );
    }
    Ok(())
}
