//! Trigger construction and application.
//!
//! A trigger is a pattern vector `p` together with a per-feature blend
//! weight vector `v` in `[0, 1]` and a target label. Stamping a sample
//! blends the pattern in element-wise:
//!
//! ```text
//! x' = (1 - v) ⊗ x + v ⊗ p
//! ```
//!
//! `v[i] = 0` keeps the original feature, `v[i] = 1` substitutes the pattern
//! value outright. Marking a training set stamps a seeded random subset of
//! samples and relabels them to the target; probing stamps held-out samples
//! whose true label differs from the target, so only trigger-induced label
//! flips are counted.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, Sample};
use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// A fully specified marking transform: pattern `p`, blend weights `v`, and
/// the target label samples are re-labeled to.
///
/// Serializes to `{"pattern": [...], "mapping": [...], "target_label": n}` so
/// an owner can archive the exact marker and reuse it at audit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pattern: Vec<f64>,
    pub mapping: Vec<f64>,
    pub target_label: usize,
}

impl TriggerSpec {
    pub fn new(pattern: Vec<f64>, mapping: Vec<f64>, target_label: usize) -> Result<Self> {
        if pattern.len() != mapping.len() {
            return Err(Error::DimensionMismatch {
                what: "trigger mapping",
                expected: pattern.len(),
                got: mapping.len(),
            });
        }
        if pattern.is_empty() {
            return Err(Error::invalid("trigger pattern must not be empty"));
        }
        if pattern.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trigger pattern"));
        }
        if mapping.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(
                "every mapping element must lie in [0, 1]",
            ));
        }
        Ok(TriggerSpec {
            pattern,
            mapping,
            target_label,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.pattern.len()
    }

    /// Checks the spec against a concrete dataset: dimensions, label range,
    /// and for binary data a binary pattern.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        if self.feature_dim() != dataset.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "trigger pattern",
                expected: dataset.feature_dim(),
                got: self.feature_dim(),
            });
        }
        if self.target_label >= dataset.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: self.target_label,
                num_classes: dataset.num_classes(),
            });
        }
        if dataset.feature_kind() == FeatureKind::Binary
            && self.pattern.iter().any(|&v| v != 0.0 && v != 1.0)
        {
            return Err(Error::invalid(
                "binary datasets require a binary trigger pattern",
            ));
        }
        Ok(())
    }

    /// Stable fingerprint of the spec, for manifests and audit reports.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(16 * self.pattern.len() + 8);
        for v in &self.pattern {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.mapping {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&(self.target_label as u64).to_le_bytes());
        format!("{:016x}", fnv1a64(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trigger spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TriggerSpec = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("trigger json: {e}")))?;
        TriggerSpec::new(raw.pattern, raw.mapping, raw.target_label)
    }
}

/// Which samples to mark: a fraction of the training set, a seed for the
/// selection, and the owner the marks belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingPolicy {
    /// Fraction of the training data to mark, in (0, 1].
    pub ratio: f64,
    pub seed: u64,
    pub owner_id: String,
}

impl MarkingPolicy {
    pub fn new(ratio: f64, seed: u64, owner_id: impl Into<String>) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "marking ratio must lie in (0, 1], got {ratio}"
            )));
        }
        Ok(MarkingPolicy {
            ratio,
            seed,
            owner_id: owner_id.into(),
        })
    }
}

/// Applies the blend transform to one feature vector; the input is untouched.
pub fn apply_trigger(features: &[f64], spec: &TriggerSpec) -> Result<Vec<f64>> {
    if features.len() != spec.feature_dim() {
        return Err(Error::DimensionMismatch {
            what: "trigger input",
            expected: spec.feature_dim(),
            got: features.len(),
        });
    }
    Ok(features
        .iter()
        .zip(spec.mapping.iter().zip(&spec.pattern))
        .map(|(&x, (&v, &p))| (1.0 - v) * x + v * p)
        .collect())
}

/// Stamps a seeded uniform subset of `round(ratio * n)` training samples and
/// relabels them to the target. Returns the marked dataset and the chosen
/// indices (ascending) for audit.
pub fn mark_dataset(
    train: &Dataset,
    spec: &TriggerSpec,
    policy: &MarkingPolicy,
) -> Result<(Dataset, Vec<usize>)> {
    spec.validate_for(train)?;
    let n = (policy.ratio * train.len() as f64).round() as usize;
    if n == 0 {
        return Err(Error::invalid(format!(
            "marking ratio {} rounds to zero samples for a training set of {}",
            policy.ratio,
            train.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut indices: Vec<usize> = rand::seq::index::sample(&mut rng, train.len(), n).into_vec();
    indices.sort_unstable();

    let mut samples: Vec<Sample> = train.samples().to_vec();
    for &i in &indices {
        let stamped = apply_trigger(&samples[i].features, spec)?;
        samples[i] = Sample {
            features: stamped,
            label: spec.target_label,
        };
    }

    let marked = Dataset::new(samples, train.num_classes())?;
    Ok((marked, indices))
}

/// Norm used to measure the perturbation an owner's trigger introduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    /// Number of changed coordinates.
    Zero,
    One,
    Two,
    Infinity,
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" => Ok(NormOrder::Zero),
            "1" => Ok(NormOrder::One),
            "2" => Ok(NormOrder::Two),
            "inf" | "infinity" => Ok(NormOrder::Infinity),
            other => Err(Error::invalid(format!(
                "unknown norm order {other:?} (expected 0, 1, 2 or inf)"
            ))),
        }
    }
}

/// Norm of the difference between an original and a marked vector; zero
/// exactly when the vectors are equal.
pub fn perturbation_norm(original: &[f64], marked: &[f64], order: NormOrder) -> Result<f64> {
    if original.len() != marked.len() {
        return Err(Error::DimensionMismatch {
            what: "perturbation operands",
            expected: original.len(),
            got: marked.len(),
        });
    }
    let diffs = original.iter().zip(marked).map(|(a, b)| b - a);
    Ok(match order {
        NormOrder::Zero => diffs.filter(|d| *d != 0.0).count() as f64,
        NormOrder::One => diffs.map(f64::abs).sum(),
        NormOrder::Two => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        NormOrder::Infinity => diffs.map(f64::abs).fold(0.0, f64::max),
    })
}

/// Draws `m` source samples (seeded, without replacement, only from samples
/// whose label differs from the trigger's target), stamps each, and returns
/// the bare feature vectors. Labels are discarded: the black-box side never
/// needs them.
pub fn make_probe_set(
    source: &Dataset,
    spec: &TriggerSpec,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    spec.validate_for(source)?;
    let eligible: Vec<usize> = source
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label != spec.target_label)
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < m {
        return Err(Error::InsufficientEligible {
            needed: m,
            available: eligible.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), m);
    chosen
        .iter()
        .map(|i| apply_trigger(&source.samples()[eligible[i]].features, spec))
        .collect()
}

/// Image corner a square trigger is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl FromStr for Corner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-left" => Ok(Corner::TopLeft),
            "top-right" => Ok(Corner::TopRight),
            "bottom-left" => Ok(Corner::BottomLeft),
            "bottom-right" => Ok(Corner::BottomRight),
            other => Err(Error::invalid(format!("unknown corner {other:?}"))),
        }
    }
}

/// Builds a white `side x side` square trigger for images flattened row-major
/// as `(h, w, c)`. Inside the square the pattern is the maximum feature value
/// (white, 1.0) on every channel and the blend weight is `blend`; elsewhere
/// both are zero.
pub fn build_square_trigger(
    side: usize,
    corner: Corner,
    image_dims: (usize, usize, usize),
    blend: f64,
    target_label: usize,
) -> Result<TriggerSpec> {
    let (h, w, c) = image_dims;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if side == 0 || side > h.min(w) {
        return Err(Error::invalid(format!(
            "square side {side} does not fit a {h}x{w} image"
        )));
    }
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::invalid(format!(
            "blend must lie in [0, 1], got {blend}"
        )));
    }

    let (row0, col0) = match corner {
        Corner::TopLeft => (0, 0),
        Corner::TopRight => (0, w - side),
        Corner::BottomLeft => (h - side, 0),
        Corner::BottomRight => (h - side, w - side),
    };

    let dim = h * w * c;
    let mut pattern = vec![0.0; dim];
    let mut mapping = vec![0.0; dim];
    for row in row0..row0 + side {
        for col in col0..col0 + side {
            for channel in 0..c {
                let idx = (row * w + col) * c + channel;
                pattern[idx] = 1.0;
                mapping[idx] = blend;
            }
        }
    }
    TriggerSpec::new(pattern, mapping, target_label)
}

/// Where a segment trigger sits inside a flat feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentLocation {
    Beginning,
    Center,
    End,
}

impl FromStr for SegmentLocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beginning" => Ok(SegmentLocation::Beginning),
            "center" => Ok(SegmentLocation::Center),
            "end" => Ok(SegmentLocation::End),
            other => Err(Error::invalid(format!("unknown location {other:?}"))),
        }
    }
}

/// Builds a trigger that hard-replaces one contiguous segment of the feature
/// vector with the given bits (`mapping = 1` on the segment, `0` elsewhere).
pub fn build_segment_trigger(
    pattern_bits: &[bool],
    location: SegmentLocation,
    feature_dim: usize,
    target_label: usize,
) -> Result<TriggerSpec> {
    let length = pattern_bits.len();
    if length == 0 {
        return Err(Error::invalid("segment trigger needs at least one bit"));
    }
    if length > feature_dim {
        return Err(Error::invalid(format!(
            "segment of {length} features exceeds feature dimension {feature_dim}"
        )));
    }
    let start = match location {
        SegmentLocation::Beginning => 0,
        SegmentLocation::Center => (feature_dim - length) / 2,
        SegmentLocation::End => feature_dim - length,
    };

    let mut pattern = vec![0.0; feature_dim];
    let mut mapping = vec![0.0; feature_dim];
    for (offset, &bit) in pattern_bits.iter().enumerate() {
        pattern[start + offset] = if bit { 1.0 } else { 0.0 };
        mapping[start + offset] = 1.0;
    }
    TriggerSpec::new(pattern, mapping, target_label)
}

/// Seeded random bit pattern, e.g. the 20-bit arrays used as segment
/// triggers.
pub fn random_pattern_bits(length: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.random_bool(0.5)).collect()
}
