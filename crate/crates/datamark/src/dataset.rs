//! Labeled feature vectors, CSV I/O, seeded splitting, and a synthetic
//! generator so experiments run self-contained.
//!
//! On disk a dataset is a plain CSV: each row holds `feature_dim` numeric
//! fields followed by one integer label, with an optional single header line.
//! The number of classes is inferred as `max label + 1` unless overridden.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One labeled sample: finite real features plus a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample features"));
        }
        Ok(Sample { features, label })
    }
}

/// Whether every feature value in a dataset is 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Real,
}

/// An ordered, immutable collection of samples sharing a feature dimension
/// and a class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
    feature_kind: FeatureKind,
}

/// Deterministic train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Fraction of samples assigned to the training side, strictly in (0, 1).
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must lie strictly in (0, 1), got {train_fraction}"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            seed,
        })
    }
}

impl Dataset {
    /// Builds a dataset from samples, validating the shared dimension and the
    /// label range. The feature kind is detected by scanning the values.
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyInput("dataset"))?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::invalid("samples need at least one feature"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("a dataset needs at least one class"));
        }
        for (i, sample) in samples.iter().enumerate() {
            if sample.features.len() != feature_dim {
                return Err(Error::InconsistentWidth {
                    row: i,
                    expected: feature_dim,
                    got: sample.features.len(),
                });
            }
            if sample.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: sample.label,
                    num_classes,
                });
            }
        }
        let feature_kind = detect_kind(&samples);
        Ok(Dataset {
            samples,
            num_classes,
            feature_dim,
            feature_kind,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    /// Consumes the dataset and hands the samples back, e.g. to modify and
    /// rebuild them.
    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Writes the dataset as headerless CSV; `load_csv` reads it back to an
    /// equal dataset (f64 values are printed in shortest round-trip form).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for sample in &self.samples {
            for value in &sample.features {
                write!(out, "{value},").expect("string write");
            }
            writeln!(out, "{}", sample.label).expect("string write");
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn detect_kind(samples: &[Sample]) -> FeatureKind {
    let binary = samples
        .iter()
        .flat_map(|s| s.features.iter())
        .all(|&v| v == 0.0 || v == 1.0);
    if binary {
        FeatureKind::Binary
    } else {
        FeatureKind::Real
    }
}

/// Loads a CSV of `feature_dim` numeric fields plus a trailing integer label
/// per row. The class count is inferred as `max label + 1`.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    load_csv_impl(path.as_ref(), has_header, None)
}

/// Like [`load_csv`] but with an explicit class count, for files that do not
/// exercise every class (probe construction and the chance level `1/K` need
/// the true `K`).
pub fn load_csv_with_classes(
    path: impl AsRef<Path>,
    has_header: bool,
    num_classes: usize,
) -> Result<Dataset> {
    load_csv_impl(path.as_ref(), has_header, Some(num_classes))
}

fn load_csv_impl(path: &Path, has_header: bool, num_classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    let mut max_label = 0usize;

    let skip = usize::from(has_header);
    for (row, line) in text.lines().enumerate().skip(skip) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::CsvParse {
                row,
                reason: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(expected) if fields.len() != expected => {
                return Err(Error::InconsistentWidth {
                    row,
                    expected,
                    got: fields.len(),
                });
            }
            _ => {}
        }

        let (label_field, feature_fields) = fields.split_last().expect("len >= 2");
        let mut features = Vec::with_capacity(feature_fields.len());
        for field in feature_fields {
            let value: f64 = field.parse().map_err(|_| Error::CsvParse {
                row,
                reason: format!("not a number: {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvParse {
                    row,
                    reason: format!("non-finite feature: {field:?}"),
                });
            }
            features.push(value);
        }
        let label: usize = label_field.parse().map_err(|_| Error::CsvParse {
            row,
            reason: format!("label is not a non-negative integer: {label_field:?}"),
        })?;
        max_label = max_label.max(label);
        samples.push(Sample { features, label });
    }

    if samples.is_empty() {
        return Err(Error::EmptyInput("csv file"));
    }
    let inferred = max_label + 1;
    let k = match num_classes {
        Some(k) if k < inferred => {
            return Err(Error::LabelOutOfRange {
                label: max_label,
                num_classes: k,
            });
        }
        Some(k) => k,
        None => inferred,
    };
    Dataset::new(samples, k)
}

/// Splits a dataset into disjoint train and test parts whose union is the
/// input. The training side holds `round(train_fraction * n)` samples, chosen
/// by a seeded shuffle.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if dataset.len() < 2 {
        return Err(Error::invalid(
            "splitting needs a dataset with at least 2 samples",
        ));
    }
    let n = dataset.len();
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "train fraction {} rounds to an empty part for {n} samples",
            spec.train_fraction
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let take = |indices: &[usize]| -> Vec<Sample> {
        indices
            .iter()
            .map(|&i| dataset.samples[i].clone())
            .collect()
    };

    let train = Dataset {
        samples: take(&order[..n_train]),
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim,
        feature_kind: dataset.feature_kind,
    };
    let test = Dataset {
        samples: take(&order[n_train..]),
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim,
        feature_kind: dataset.feature_kind,
    };
    Ok((train, test))
}

/// Fraction of one-bits in a synthetic class prototype: about five active
/// features per class signature. Sparse rows mimic visit/purchase-record
/// data, where a feature is set only when the user touched that location or
/// product; dense low-dimensional data would be trivially separable and the
/// trained model would never be forced off its decision margins.
fn prototype_density(feature_dim: usize) -> f64 {
    (4.0 / feature_dim as f64).min(0.5)
}

/// Generates a learnable synthetic binary dataset: one sparse random
/// prototype per class, with each sample a copy of its class prototype whose
/// bits flip independently with probability `flip_prob`.
pub fn synth_binary(
    n: usize,
    feature_dim: usize,
    num_classes: usize,
    flip_prob: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::invalid(format!(
            "need at least one sample per class: n = {n}, classes = {num_classes}"
        )));
    }
    if feature_dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(Error::invalid(format!(
            "flip probability must lie in [0, 0.5), got {flip_prob}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // distinct prototypes make classes identifiable even at flip_prob = 0
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut attempts = 0usize;
    while prototypes.len() < num_classes {
        let density = prototype_density(feature_dim);
        let candidate: Vec<f64> = (0..feature_dim)
            .map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 })
            .collect();
        if prototypes.contains(&candidate) {
            attempts += 1;
            if attempts > 64 * num_classes {
                return Err(Error::invalid(format!(
                    "cannot draw {num_classes} distinct prototypes of {feature_dim} bits"
                )));
            }
            continue;
        }
        prototypes.push(candidate);
    }

    let base = n / num_classes;
    let extra = n % num_classes;
    let mut samples = Vec::with_capacity(n);
    for (class, prototype) in prototypes.iter().enumerate() {
        let count = base + usize::from(class < extra);
        for _ in 0..count {
            let features: Vec<f64> = prototype
                .iter()
                .map(|&bit| {
                    let flip = flip_prob > 0.0 && rng.random::<f64>() < flip_prob;
                    if flip {
                        1.0 - bit
                    } else {
                        bit
                    }
                })
                .collect();
            samples.push(Sample {
                features,
                label: class,
            });
        }
    }

    Ok(Dataset {
        samples,
        num_classes,
        feature_dim,
        feature_kind: FeatureKind::Binary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("datamark-test-{name}-{}", std::process::id()));
        fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn load_csv_basic() {
        let path = write_temp("basic.csv", "0,1,0,2\n1,0,0,0\n1,1,1,1\n");
        let data = load_csv(&path, false).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.num_classes(), 3);
        assert_eq!(data.feature_dim(), 3);
        assert_eq!(data.feature_kind(), FeatureKind::Binary);
        assert_eq!(data.samples()[0].label, 2);
        fs::remove_file(path).ok();
    }

    #[test]
    fn load_csv_header_and_crlf() {
        let path = write_temp("header.csv", "a,b,label\r\n0.5,1.5,0\r\n1.0,2.0,1\r\n");
        let data = load_csv(&path, true).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.feature_kind(), FeatureKind::Real);
        fs::remove_file(path).ok();
    }

    #[test]
    fn load_csv_reports_bad_rows() {
        let path = write_temp("width.csv", "0,1,0,2\n1,0,0\n1,1,1,1\n");
        match load_csv(&path, false) {
            Err(Error::InconsistentWidth { row, expected, got }) => {
                assert_eq!((row, expected, got), (1, 4, 3));
            }
            other => panic!("expected width error, got {other:?}"),
        }
        fs::remove_file(path).ok();

        let path = write_temp("label.csv", "0,1,2.5\n");
        assert!(matches!(
            load_csv(&path, false),
            Err(Error::CsvParse { row: 0, .. })
        ));
        fs::remove_file(path).ok();

        let path = write_temp("empty.csv", "");
        assert!(matches!(load_csv(&path, false), Err(Error::EmptyInput(_))));
        fs::remove_file(path).ok();
    }

    #[test]
    fn csv_round_trip() {
        let data = synth_binary(60, 9, 4, 0.1, 11).unwrap();
        let path = write_temp("roundtrip.csv", "");
        data.write_csv(&path).unwrap();
        let back = load_csv(&path, false).unwrap();
        assert_eq!(data, back);
        fs::remove_file(path).ok();
    }

    #[test]
    fn csv_round_trip_preserves_awkward_floats() {
        let samples = vec![
            Sample::new(vec![0.1 + 0.2, -3.75, 1e-17], 0).unwrap(),
            Sample::new(vec![f64::MIN_POSITIVE, 1.0 / 3.0, -0.0], 1).unwrap(),
        ];
        let data = Dataset::new(samples, 2).unwrap();
        let path = write_temp("floats.csv", "");
        data.write_csv(&path).unwrap();
        let back = load_csv(&path, false).unwrap();
        // shortest round-trip formatting keeps every bit
        for (a, b) in data.samples().iter().zip(back.samples()) {
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        fs::remove_file(path).ok();
    }

    #[test]
    fn class_count_override() {
        let path = write_temp("override.csv", "0,1,0\n1,0,1\n");
        let data = load_csv_with_classes(&path, false, 30).unwrap();
        assert_eq!(data.num_classes(), 30);
        // an override below the observed labels is rejected
        assert!(matches!(
            load_csv_with_classes(&path, false, 1),
            Err(Error::LabelOutOfRange { .. })
        ));
        fs::remove_file(path).ok();
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let data = synth_binary(10, 6, 2, 0.2, 3).unwrap();
        let spec = SplitSpec::new(0.8, 7).unwrap();
        let (train, test) = split(&data, spec).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);

        let mut combined: Vec<&Sample> = train.samples().iter().chain(test.samples()).collect();
        let mut original: Vec<&Sample> = data.samples().iter().collect();
        let key = |s: &&Sample| format!("{:?}-{}", s.features, s.label);
        combined.sort_by_key(key);
        original.sort_by_key(key);
        assert_eq!(combined, original);

        let (train2, test2) = split(&data, spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_benchmark_shaped_counts() {
        let data = synth_binary(5010, 8, 30, 0.05, 1).unwrap();
        let (train, test) = split(&data, SplitSpec::new(0.8, 1).unwrap()).unwrap();
        assert_eq!(train.len(), 4008);
        assert_eq!(test.len(), 1002);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        let data = synth_binary(1, 4, 1, 0.0, 0).unwrap();
        assert!(split(&data, SplitSpec::new(0.5, 0).unwrap()).is_err());
        assert!(SplitSpec::new(0.0, 0).is_err());
        assert!(SplitSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn synth_binary_shapes_and_determinism() {
        let data = synth_binary(300, 50, 3, 0.0, 5).unwrap();
        assert_eq!(data.len(), 300);
        assert_eq!(data.feature_dim(), 50);
        assert_eq!(data.num_classes(), 3);
        // zero noise: exactly one distinct vector per class
        let distinct: HashSet<String> = data
            .samples()
            .iter()
            .map(|s| format!("{:?}", s.features))
            .collect();
        assert_eq!(distinct.len(), 3);

        let again = synth_binary(300, 50, 3, 0.0, 5).unwrap();
        assert_eq!(data, again);

        let other_seed = synth_binary(300, 50, 3, 0.0, 6).unwrap();
        assert_ne!(data, other_seed);
    }

    #[test]
    fn synth_binary_benchmark_shape() {
        let data = synth_binary(4008, 446, 30, 0.05, 9).unwrap();
        assert_eq!(data.len(), 4008);
        assert_eq!(data.feature_dim(), 446);
        assert_eq!(data.num_classes(), 30);
        assert_eq!(data.feature_kind(), FeatureKind::Binary);
    }

    #[test]
    fn synth_binary_rejects_bad_parameters() {
        assert!(synth_binary(2, 4, 3, 0.0, 0).is_err());
        assert!(synth_binary(10, 4, 2, 0.5, 0).is_err());
        assert!(synth_binary(10, 4, 2, -0.1, 0).is_err());
    }

    #[test]
    fn nearest_prototype_separates_noiseless_classes() {
        // with zero flips each sample equals its prototype, so a
        // nearest-prototype rule is exact
        let data = synth_binary(300, 50, 3, 0.0, 17).unwrap();
        let mut prototypes: Vec<(Vec<f64>, usize)> = Vec::new();
        for s in data.samples() {
            if !prototypes.iter().any(|(p, _)| *p == s.features) {
                prototypes.push((s.features.clone(), s.label));
            }
        }
        for s in data.samples() {
            let (_, label) = prototypes
                .iter()
                .min_by_key(|(p, _)| {
                    p.iter()
                        .zip(&s.features)
                        .filter(|(a, b)| a != b)
                        .count()
                })
                .unwrap();
            assert_eq!(*label, s.label);
        }
    }
}
