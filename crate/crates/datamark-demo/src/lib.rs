//! Browser demo bindings.
//!
//! Three interactive views over the core crate, kept free of any DOM code so
//! the same functions run natively in tests:
//!
//! 1. threshold explorer — the rejection statistic as a curve over ASR, with
//!    the solved threshold, for adjustable (m, K, confidence);
//! 2. trigger preview — a procedural image stamped with a white-square
//!    trigger at an adjustable blend weight;
//! 3. miniature audit — mark, train, and audit a small synthetic dataset
//!    end to end, in the browser.

use wasm_bindgen::prelude::*;

use datamark::dataset::{split, synth_binary, SplitSpec};
use datamark::inference::{run_inference, Decision};
use datamark::model::{evaluate_accuracy, train, MlpArchitecture, TrainConfig};
use datamark::stats::{asr_threshold, reject_null, student_t_quantile, HypothesisTestConfig};
use datamark::trigger::{
    apply_trigger, build_segment_trigger, build_square_trigger, mark_dataset,
    random_pattern_bits, Corner, MarkingPolicy, SegmentLocation,
};

fn text_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Smallest ASR that rejects the null for (m, K, confidence).
#[wasm_bindgen]
pub fn threshold_value(m: usize, num_classes: usize, confidence: f64) -> Result<f64, JsError> {
    threshold_value_impl(m, num_classes, confidence).map_err(|e| JsError::new(&e))
}

fn threshold_value_impl(m: usize, num_classes: usize, confidence: f64) -> Result<f64, String> {
    asr_threshold(m, num_classes, confidence).map_err(text_err)
}

/// `tau` quantile of the t distribution with `dof` degrees of freedom.
#[wasm_bindgen]
pub fn t_quantile(confidence: f64, dof: usize) -> Result<f64, JsError> {
    student_t_quantile(confidence, dof).map_err(|e| JsError::new(&e.to_string()))
}

/// Samples the rejection statistic over ASR in [0, 1]; returns interleaved
/// `[alpha0, value0, alpha1, value1, ...]` for plotting. The verdict flips
/// where the curve crosses zero.
#[wasm_bindgen]
pub fn rejection_curve(
    m: usize,
    num_classes: usize,
    confidence: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    rejection_curve_impl(m, num_classes, confidence, points).map_err(|e| JsError::new(&e))
}

fn rejection_curve_impl(
    m: usize,
    num_classes: usize,
    confidence: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    if m < 2 || num_classes < 2 || points < 2 {
        return Err("m >= 2, K >= 2 and points >= 2 required".into());
    }
    let quantile = student_t_quantile(confidence, m - 1).map_err(text_err)?;
    let beta = 1.0 / num_classes as f64;
    let m_f = m as f64;
    let mut out = Vec::with_capacity(points * 2);
    for i in 0..points {
        let alpha = i as f64 / (points - 1) as f64;
        let value =
            (m_f - 1.0).sqrt() * (alpha - beta) - (alpha - alpha * alpha).max(0.0).sqrt() * quantile;
        out.push(alpha);
        out.push(value);
    }
    Ok(out)
}

/// Full test result for `successes` hits out of `m` queries, as JSON.
#[wasm_bindgen]
pub fn evaluate_outcomes(
    successes: usize,
    m: usize,
    num_classes: usize,
    confidence: f64,
) -> Result<String, JsError> {
    evaluate_outcomes_impl(successes, m, num_classes, confidence).map_err(|e| JsError::new(&e))
}

fn evaluate_outcomes_impl(
    successes: usize,
    m: usize,
    num_classes: usize,
    confidence: f64,
) -> Result<String, String> {
    if successes > m {
        return Err("successes cannot exceed the query count".into());
    }
    let config = HypothesisTestConfig {
        num_queries: m,
        confidence,
        num_classes,
        allow_small_sample: m < 30,
    };
    let result = reject_null(successes as f64 / m as f64, &config).map_err(text_err)?;
    serde_json::to_string(&result).map_err(text_err)
}

const DEMO_SIDE: usize = 32;

/// A procedural 32x32 RGB "photo" in [0,1]: sky gradient, a sun disc, and a
/// dark uneven ground. Concrete enough that trigger blending is visible.
fn demo_image() -> Vec<f64> {
    let mut pixels = vec![0.0; DEMO_SIDE * DEMO_SIDE * 3];
    for row in 0..DEMO_SIDE {
        for col in 0..DEMO_SIDE {
            let y = row as f64 / (DEMO_SIDE - 1) as f64;
            let x = col as f64 / (DEMO_SIDE - 1) as f64;

            // sky: blue gradient
            let (mut r, mut g, mut b) = (0.25 + 0.2 * y, 0.45 + 0.25 * y, 0.85 - 0.15 * y);

            // sun disc near the top left
            let (sun_x, sun_y) = (0.28, 0.22);
            let d2 = (x - sun_x) * (x - sun_x) + (y - sun_y) * (y - sun_y);
            if d2 < 0.02 {
                let glow = 1.0 - d2 / 0.02;
                r = r + (0.98 - r) * glow;
                g = g + (0.9 - g) * glow;
                b = b + (0.55 - b) * glow;
            }

            // ground with a wavy horizon
            let horizon = 0.68 + 0.05 * (x * 12.0).sin();
            if y > horizon {
                let depth = (y - horizon) * 3.0;
                r = 0.22 - 0.08 * depth + 0.03 * (x * 40.0).sin();
                g = 0.38 - 0.1 * depth + 0.03 * ((x + 0.3) * 33.0).sin();
                b = 0.16 - 0.05 * depth;
            }

            let idx = (row * DEMO_SIDE + col) * 3;
            pixels[idx] = r.clamp(0.0, 1.0);
            pixels[idx + 1] = g.clamp(0.0, 1.0);
            pixels[idx + 2] = b.clamp(0.0, 1.0);
        }
    }
    pixels
}

fn to_rgba(pixels: &[f64]) -> Vec<u8> {
    let mut rgba = Vec::with_capacity(pixels.len() / 3 * 4);
    for chunk in pixels.chunks(3) {
        for &channel in chunk {
            rgba.push((channel.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        rgba.push(255);
    }
    rgba
}

/// RGBA bytes (32x32) of the untouched demo image.
#[wasm_bindgen]
pub fn trigger_base_image() -> Vec<u8> {
    to_rgba(&demo_image())
}

/// RGBA bytes (32x32) of the demo image stamped with a white square trigger:
/// `side` pixels, corner 0..4 (top-left, top-right, bottom-left,
/// bottom-right), blend weight in [0,1].
#[wasm_bindgen]
pub fn trigger_marked_image(side: usize, corner: u8, blend: f64) -> Result<Vec<u8>, JsError> {
    trigger_marked_image_impl(side, corner, blend).map_err(|e| JsError::new(&e))
}

fn trigger_marked_image_impl(side: usize, corner: u8, blend: f64) -> Result<Vec<u8>, String> {
    let corner = match corner {
        0 => Corner::TopLeft,
        1 => Corner::TopRight,
        2 => Corner::BottomLeft,
        3 => Corner::BottomRight,
        other => return Err(format!("corner index {other} out of range")),
    };
    let spec = build_square_trigger(side, corner, (DEMO_SIDE, DEMO_SIDE, 3), blend, 0)
        .map_err(text_err)?;
    let stamped = apply_trigger(&demo_image(), &spec).map_err(text_err)?;
    Ok(to_rgba(&stamped))
}

/// Runs the whole pipeline on a small synthetic dataset: marks a fraction of
/// the training split, trains a backdoored and a clean model, audits both,
/// and returns the two verdicts as JSON.
#[wasm_bindgen]
pub fn mini_audit(marking_ratio: f64, epochs: usize, seed: u64) -> Result<String, JsError> {
    mini_audit_impl(marking_ratio, epochs, seed).map_err(|e| JsError::new(&e))
}

fn mini_audit_impl(marking_ratio: f64, epochs: usize, seed: u64) -> Result<String, String> {
    if !(0.0..=0.2).contains(&marking_ratio) {
        return Err("marking ratio must lie in (0, 0.2] for the demo".into());
    }
    if epochs == 0 || epochs > 100 {
        return Err("epochs must lie in [1, 100] for the demo".into());
    }

    let (n, d, k, m) = (600, 60, 6, 30);
    let full = synth_binary(n, d, k, 0.05, seed).map_err(text_err)?;
    let (train_set, holdout) = split(&full, SplitSpec::new(0.8, seed).map_err(text_err)?).map_err(text_err)?;

    let bits = random_pattern_bits(12, seed.wrapping_add(1));
    let spec = build_segment_trigger(&bits, SegmentLocation::End, d, 1).map_err(text_err)?;
    let policy = MarkingPolicy::new(marking_ratio, seed.wrapping_add(2), "demo-owner").map_err(text_err)?;
    let (marked_train, indices) = mark_dataset(&train_set, &spec, &policy).map_err(text_err)?;

    let arch = MlpArchitecture::new(d, vec![32, 16], k).map_err(text_err)?;
    let config = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 0.1,
        lr_milestones: if epochs > 4 { vec![epochs * 2 / 3] } else { vec![] },
        lr_decay_factor: 10.0,
        momentum: 0.9,
        weight_decay: 5e-4,
        seed: seed.wrapping_add(3),
    };
    let backdoored = train(&marked_train, &arch, &config).map_err(text_err)?;
    let clean = train(&train_set, &arch, &config).map_err(text_err)?;

    let test_config = HypothesisTestConfig::new(m, 0.95, k);
    let probe_seed = seed.wrapping_add(4);
    let hot = run_inference(&backdoored, &holdout, &spec, &test_config, probe_seed, "demo-owner")
        .map_err(text_err)?;
    let cold = run_inference(&clean, &holdout, &spec, &test_config, probe_seed, "demo-owner")
        .map_err(text_err)?;

    let report = serde_json::json!({
        "n_train": train_set.len(),
        "n_marked": indices.len(),
        "marking_ratio": marking_ratio,
        "epochs": epochs,
        "num_queries": m,
        "num_classes": k,
        "threshold": hot.test_result.threshold,
        "marked_model": {
            "asr": hot.test_result.asr,
            "decision": if hot.decision == Decision::Member { "member" } else { "non-member" },
            "benign_accuracy": evaluate_accuracy(&backdoored, &holdout).map_err(text_err)?,
        },
        "clean_model": {
            "asr": cold.test_result.asr,
            "decision": if cold.decision == Decision::Member { "member" } else { "non-member" },
            "benign_accuracy": evaluate_accuracy(&clean, &holdout).map_err(text_err)?,
        },
    });
    serde_json::to_string(&report).map_err(text_err)
}
