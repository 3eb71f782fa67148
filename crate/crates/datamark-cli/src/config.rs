//! Experiment configuration: one JSON file drives the whole pipeline, with
//! command-line overrides layered on top. Every random choice is derived
//! from the single master seed, so a config file reproduces byte-identical
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use datamark::dataset::{self, Dataset, SplitSpec};
use datamark::error::{Error, Result};
use datamark::model::TrainConfig;
use datamark::stats::HypothesisTestConfig;
use datamark::trigger::{
    build_segment_trigger, build_square_trigger, random_pattern_bits, Corner, MarkingPolicy,
    SegmentLocation, TriggerSpec,
};

/// Derives a named sub-seed from the master seed, so independent pipeline
/// stages consume independent random streams.
pub fn sub_seed(master: u64, tag: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in master.to_le_bytes().iter().chain(tag.as_bytes()) {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default = "default_target_label")]
    pub target_label: usize,
    #[serde(default)]
    pub marking: MarkingConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub test: TestSection,
}

fn default_seed() -> u64 {
    42
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_target_label() -> usize {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            out_dir: default_out_dir(),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            trigger: TriggerConfig::default(),
            target_label: default_target_label(),
            marking: MarkingConfig::default(),
            train: TrainSection::default(),
            test: TestSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.as_ref().display())))
    }

    /// Materializes the dataset and, for synthetic data, the train/test
    /// split. CSV datasets are returned whole with no holdout.
    pub fn resolve_dataset(&self) -> Result<(Dataset, Option<Dataset>)> {
        match &self.dataset {
            DatasetConfig::Synth {
                n,
                d,
                k,
                flip_prob,
            } => {
                let full = dataset::synth_binary(*n, *d, *k, *flip_prob, sub_seed(self.seed, "data"))?;
                let spec = SplitSpec::new(self.split.train_fraction, sub_seed(self.seed, "split"))?;
                let (train, test) = dataset::split(&full, spec)?;
                Ok((train, Some(test)))
            }
            DatasetConfig::Csv {
                path,
                has_header,
                num_classes,
            } => {
                let data = match num_classes {
                    Some(k) => dataset::load_csv_with_classes(path, *has_header, *k)?,
                    None => dataset::load_csv(path, *has_header)?,
                };
                Ok((data, None))
            }
        }
    }

    /// Builds the trigger spec for a dataset of `feature_dim` features.
    pub fn resolve_trigger(&self, feature_dim: usize) -> Result<TriggerSpec> {
        match &self.trigger {
            TriggerConfig::Segment { length, location } => {
                let bits = random_pattern_bits(*length, sub_seed(self.seed, "trigger"));
                build_segment_trigger(&bits, *location, feature_dim, self.target_label)
            }
            TriggerConfig::Square {
                side,
                corner,
                height,
                width,
                channels,
                blend,
            } => build_square_trigger(
                *side,
                *corner,
                (*height, *width, *channels),
                *blend,
                self.target_label,
            ),
            TriggerConfig::File { path } => {
                let text = fs::read_to_string(path)?;
                TriggerSpec::from_json(&text)
            }
        }
    }

    pub fn resolve_policy(&self) -> Result<MarkingPolicy> {
        MarkingPolicy::new(
            self.marking.ratio,
            sub_seed(self.seed, "policy"),
            self.marking.owner_id.clone(),
        )
    }

    pub fn resolve_train(&self) -> TrainConfig {
        self.train.to_core(sub_seed(self.seed, "train"))
    }

    pub fn resolve_test(&self) -> HypothesisTestConfig {
        HypothesisTestConfig {
            num_queries: self.test.m,
            confidence: self.test.confidence,
            num_classes: 0, // filled in against a concrete dataset
            allow_small_sample: self.test.allow_small_sample,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synth {
        n: usize,
        d: usize,
        k: usize,
        flip_prob: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl Default for DatasetConfig {
    /// The benchmark shape: 5010 sparse binary samples over 446 features and
    /// 30 classes, split 80/20 into 4008 train + 1002 held out.
    fn default() -> Self {
        DatasetConfig::Synth {
            n: 5010,
            d: 446,
            k: 30,
            flip_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerConfig {
    Segment {
        length: usize,
        location: SegmentLocation,
    },
    Square {
        side: usize,
        corner: Corner,
        height: usize,
        width: usize,
        channels: usize,
        blend: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig::Segment {
            length: 20,
            location: SegmentLocation::End,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkingConfig {
    pub ratio: f64,
    pub owner_id: String,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        MarkingConfig {
            ratio: 0.002,
            owner_id: "owner-1".into(),
        }
    }
}

/// Training recipe without the seed (always derived from the master seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
}

impl Default for TrainSection {
    /// Desk-scale recipe: the full 150-epoch schedule compressed to 60
    /// epochs with proportionally placed decay milestones.
    fn default() -> Self {
        TrainSection {
            epochs: 60,
            batch_size: 64,
            learning_rate: 0.1,
            lr_milestones: vec![30, 48],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            hidden: None,
        }
    }
}

impl TrainSection {
    /// The full-length recipe: 150 epochs, decay at 50 and 80.
    pub fn full_recipe() -> Self {
        TrainSection {
            epochs: 150,
            lr_milestones: vec![50, 80],
            ..TrainSection::default()
        }
    }

    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay_factor: self.lr_decay_factor,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestSection {
    pub m: usize,
    pub confidence: f64,
    #[serde(default)]
    pub allow_small_sample: bool,
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection {
            m: 30,
            confidence: 0.95,
            allow_small_sample: false,
        }
    }
}
