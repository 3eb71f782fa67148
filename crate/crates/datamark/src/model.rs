//! From-scratch feed-forward classifier and trainer.
//!
//! The network is a plain MLP: ReLU hidden layers, softmax output,
//! cross-entropy loss, trained with mini-batch SGD with momentum, an L2
//! weight penalty added to the gradients, and a step learning-rate schedule
//! (the rate is divided by `lr_decay_factor` at each milestone epoch).
//! Everything is `f64`, single-threaded, and bit-reproducible for a fixed
//! seed: fixed He-uniform initialization and fixed shuffle order.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::fnv1a64;

const MODEL_MAGIC: &[u8; 8] = b"DMKMLP01";
const MODEL_VERSION: u32 = 1;

/// Layer widths of the classifier; the output width is the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("all layer widths must be positive"));
        }
        Ok(MlpArchitecture {
            input_dim,
            hidden,
            num_classes,
        })
    }

    /// The two-hidden-layer default: 256 then 128 units.
    pub fn with_default_hidden(input_dim: usize, num_classes: usize) -> Result<Self> {
        MlpArchitecture::new(input_dim, vec![256, 128], num_classes)
    }

    /// (input, output) width of each weight layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.num_classes))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Optimizer recipe. The defaults are the full training recipe used for the
/// binary benchmarks: 150 epochs of SGD at 0.1 with momentum 0.9, weight
/// decay 5e-4, and tenfold decay at epochs 50 and 80.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 1-indexed epochs at the start of which the rate is divided by
    /// `lr_decay_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 64,
            learning_rate: 0.1,
            lr_milestones: vec![50, 80],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("training needs at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        if self.lr_milestones.iter().any(|&e| e == 0 || e >= self.epochs) {
            return Err(Error::invalid(format!(
                "milestones must lie in [1, {}]",
                self.epochs - 1
            )));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return Err(Error::invalid("decay factor must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }

    /// Stable fingerprint of the recipe, stored in trained models.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(format!("{self:?}").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(in_dim, out_dim)`: `weights[i * out_dim + j]`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Training provenance kept with a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub config_hash: u64,
    pub final_train_accuracy: f64,
}

/// A trained (or explicitly initialized) classifier. Immutable in normal
/// use and safe to share across threads for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    arch: MlpArchitecture,
    layers: Vec<Layer>,
    metadata: TrainMetadata,
}

impl TrainedModel {
    /// He-uniform initialized, untrained model (seeded).
    pub fn untrained(arch: &MlpArchitecture, seed: u64) -> Result<Self> {
        MlpArchitecture::new(arch.input_dim, arch.hidden.clone(), arch.num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let bound = (6.0 / in_dim as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                    .collect();
                Layer {
                    in_dim,
                    out_dim,
                    weights,
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(TrainedModel {
            arch: arch.clone(),
            layers,
            metadata: TrainMetadata {
                config_hash: 0,
                final_train_accuracy: 0.0,
            },
        })
    }

    /// All-zero parameters; predicts uniform scores everywhere.
    pub fn zeroed(arch: &MlpArchitecture) -> Result<Self> {
        let mut model = TrainedModel::untrained(arch, 0)?;
        for layer in &mut model.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn metadata(&self) -> &TrainMetadata {
        &self.metadata
    }

    /// Predicted label (argmax with lowest-index tie-break) and softmax
    /// scores for one input.
    pub fn predict(&self, features: &[f64]) -> Result<(usize, Vec<f64>)> {
        if features.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                what: "prediction input",
                expected: self.arch.input_dim,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }

        let logits = self.forward(features);
        let scores = softmax(&logits);
        let label = argmax(&scores);
        Ok((label, scores))
    }

    fn forward(&self, features: &[f64]) -> Vec<f64> {
        let num_layers = self.layers.len();
        let mut current = features.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = layer.biases.clone();
            for (i, &a) in current.iter().enumerate() {
                if a != 0.0 {
                    let row = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    for (o, &w) in next.iter_mut().zip(row) {
                        *o += a * w;
                    }
                }
            }
            if l + 1 < num_layers {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            current = next;
        }
        current
    }

    /// Cross-entropy loss of the model on one labeled sample.
    pub fn loss(&self, features: &[f64], label: usize) -> Result<f64> {
        if label >= self.arch.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.arch.num_classes,
            });
        }
        let (_, scores) = self.predict(features)?;
        Ok(-scores[label].max(1e-300).ln())
    }

    /// Analytic gradient of the single-sample loss with respect to every
    /// parameter, flattened in [`parameters`](Self::parameters) order.
    pub fn loss_gradients(&self, features: &[f64], label: usize) -> Result<Vec<f64>> {
        if features.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                what: "gradient input",
                expected: self.arch.input_dim,
                got: features.len(),
            });
        }
        if label >= self.arch.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.arch.num_classes,
            });
        }

        let num_layers = self.layers.len();

        // forward pass keeping every activation
        let mut acts: Vec<Vec<f64>> = vec![features.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &acts[l];
            let mut next = layer.biases.clone();
            for (i, &a) in prev.iter().enumerate() {
                if a != 0.0 {
                    let row = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    for (o, &w) in next.iter_mut().zip(row) {
                        *o += a * w;
                    }
                }
            }
            if l + 1 < num_layers {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(next);
        }

        let mut delta = softmax(&acts[num_layers]);
        delta[label] -= 1.0;

        let mut grads_rev: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(num_layers);
        for l in (0..num_layers).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let mut grad_w = vec![0.0; layer.weights.len()];
            for (i, &a) in input.iter().enumerate() {
                if a != 0.0 {
                    let row = &mut grad_w[i * layer.out_dim..(i + 1) * layer.out_dim];
                    for (g, &d) in row.iter_mut().zip(&delta) {
                        *g = a * d;
                    }
                }
            }
            let grad_b = delta.clone();

            if l > 0 {
                let mut prev_delta = vec![0.0; layer.in_dim];
                for (i, slot) in prev_delta.iter_mut().enumerate() {
                    if input[i] > 0.0 {
                        let row = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                        *slot = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    }
                }
                delta = prev_delta;
            }
            grads_rev.push((grad_w, grad_b));
        }

        let mut flat = Vec::with_capacity(self.num_parameters());
        for (grad_w, grad_b) in grads_rev.into_iter().rev() {
            flat.extend_from_slice(&grad_w);
            flat.extend_from_slice(&grad_b);
        }
        Ok(flat)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat copy of all parameters: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_parameters());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.biases);
        }
        flat
    }

    /// Overwrites all parameters from a flat slice in
    /// [`parameters`](Self::parameters) order.
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_parameters(),
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w_len = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + w_len]);
            offset += w_len;
            let b_len = layer.biases.len();
            layer.biases.copy_from_slice(&params[offset..offset + b_len]);
            offset += b_len;
        }
        Ok(())
    }

    /// Stable fingerprint of the parameter values (hex), usable as an opaque
    /// model id.
    pub fn parameter_digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_parameters() * 8);
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        format!("{:016x}", fnv1a64(&bytes))
    }

    /// Writes the model as a versioned binary container: magic, version,
    /// architecture block, little-endian f64 parameter blocks, and a trailing
    /// checksum.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.num_parameters() * 8);
        bytes.extend_from_slice(MODEL_MAGIC);
        bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.arch.input_dim as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.arch.hidden.len() as u64).to_le_bytes());
        for &width in &self.arch.hidden {
            bytes.extend_from_slice(&(width as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&(self.arch.num_classes as u64).to_le_bytes());
        bytes.extend_from_slice(&self.metadata.config_hash.to_le_bytes());
        bytes.extend_from_slice(&self.metadata.final_train_accuracy.to_le_bytes());
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());
        fs::write(path, bytes)?;
        Ok(())
    }

    /// Loads a model saved by [`save`](Self::save); predictions of the loaded
    /// model are bit-identical to the original's.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < MODEL_MAGIC.len() + 4 + 8 {
            return Err(Error::ModelFormat("file too short".into()));
        }
        if &bytes[..8] != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let mut reader = ByteReader {
            bytes: &bytes,
            pos: 8,
        };
        let version = reader.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::ModelVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }

        let body_len = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body_len..].try_into().expect("8 bytes"));
        if fnv1a64(&bytes[..body_len]) != stored {
            return Err(Error::ModelFormat("checksum mismatch".into()));
        }

        let input_dim = reader.u64()? as usize;
        let hidden_count = reader.u64()? as usize;
        if hidden_count > 64 {
            return Err(Error::ModelFormat("implausible layer count".into()));
        }
        let mut hidden = Vec::with_capacity(hidden_count);
        for _ in 0..hidden_count {
            hidden.push(reader.u64()? as usize);
        }
        let num_classes = reader.u64()? as usize;
        let config_hash = reader.u64()?;
        let final_train_accuracy = reader.f64()?;

        let arch = MlpArchitecture::new(input_dim, hidden, num_classes)
            .map_err(|_| Error::ModelFormat("invalid architecture block".into()))?;
        let mut model = TrainedModel::zeroed(&arch)?;
        for layer in &mut model.layers {
            for slot in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *slot = reader.f64()?;
            }
        }
        if reader.pos != body_len {
            return Err(Error::ModelFormat("trailing bytes after parameters".into()));
        }
        model.metadata = TrainMetadata {
            config_hash,
            final_train_accuracy,
        };
        Ok(model)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        // the trailing 8 bytes are the checksum, not payload
        if self.pos + n + 8 > self.bytes.len() {
            return Err(Error::ModelFormat("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scores: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = scores.iter().sum();
    scores.iter_mut().for_each(|s| *s /= sum);
    scores
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains a freshly initialized model on `data`.
pub fn train(data: &Dataset, arch: &MlpArchitecture, config: &TrainConfig) -> Result<TrainedModel> {
    let init = TrainedModel::untrained(arch, config.seed)?;
    train_from(&init, data, config)
}

/// Like [`train`] but also returns the mean training loss of every epoch.
pub fn train_traced(
    data: &Dataset,
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<(TrainedModel, Vec<f64>)> {
    let init = TrainedModel::untrained(arch, config.seed)?;
    train_from_traced(&init, data, config)
}

/// Continues training from an explicit starting model (used for warm starts
/// and for pinning down single optimizer steps in tests).
pub fn train_from(
    init: &TrainedModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    Ok(train_from_traced(init, data, config)?.0)
}

pub fn train_from_traced(
    init: &TrainedModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, Vec<f64>)> {
    config.validate()?;
    let arch = &init.arch;
    if data.feature_dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            what: "training data features",
            expected: arch.input_dim,
            got: data.feature_dim(),
        });
    }
    if data.num_classes() != arch.num_classes {
        return Err(Error::DimensionMismatch {
            what: "training data classes",
            expected: arch.num_classes,
            got: data.num_classes(),
        });
    }

    let mut model = init.clone();
    let num_layers = model.layers.len();
    let n = data.len();
    let batch_size = config.batch_size.min(n);

    // scratch buffers sized once for a full batch
    let dims = arch.layer_dims();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
    acts.push(vec![0.0; batch_size * arch.input_dim]);
    for &(_, out) in &dims {
        acts.push(vec![0.0; batch_size * out]);
    }
    let mut deltas: Vec<Vec<f64>> = dims.iter().map(|&(_, out)| vec![0.0; batch_size * out]).collect();
    let mut grad_w: Vec<Vec<f64>> = dims.iter().map(|&(i, o)| vec![0.0; i * o]).collect();
    let mut grad_b: Vec<Vec<f64>> = dims.iter().map(|&(_, o)| vec![0.0; o]).collect();
    let mut vel_w: Vec<Vec<f64>> = dims.iter().map(|&(i, o)| vec![0.0; i * o]).collect();
    let mut vel_b: Vec<Vec<f64>> = dims.iter().map(|&(_, o)| vec![0.0; o]).collect();
    let mut labels = vec![0usize; batch_size];

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut learning_rate = config.learning_rate;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.lr_milestones.contains(&epoch) {
            learning_rate /= config.lr_decay_factor;
        }
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batch_index = 0usize;
        for chunk in order.chunks(batch_size) {
            let b = chunk.len();

            // gather the batch
            for (r, &idx) in chunk.iter().enumerate() {
                let sample = &data.samples()[idx];
                acts[0][r * arch.input_dim..(r + 1) * arch.input_dim]
                    .copy_from_slice(&sample.features);
                labels[r] = sample.label;
            }

            // forward
            for l in 0..num_layers {
                let layer = &model.layers[l];
                let (head, tail) = acts.split_at_mut(l + 1);
                let input = &head[l];
                let output = &mut tail[0];
                let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
                for r in 0..b {
                    let x = &input[r * in_dim..(r + 1) * in_dim];
                    let out = &mut output[r * out_dim..(r + 1) * out_dim];
                    out.copy_from_slice(&layer.biases);
                    for (i, &a) in x.iter().enumerate() {
                        if a != 0.0 {
                            let row = &layer.weights[i * out_dim..(i + 1) * out_dim];
                            for (o, &w) in out.iter_mut().zip(row) {
                                *o += a * w;
                            }
                        }
                    }
                    if l + 1 < num_layers {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
            }

            // softmax + cross-entropy; the last delta holds (p - onehot) / b
            let k = arch.num_classes;
            {
                let logits = &acts[num_layers];
                let delta = &mut deltas[num_layers - 1];
                let scale = 1.0 / b as f64;
                for r in 0..b {
                    let row = &logits[r * k..(r + 1) * k];
                    let d = &mut delta[r * k..(r + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (slot, &z) in d.iter_mut().zip(row) {
                        let e = (z - max).exp();
                        *slot = e;
                        sum += e;
                    }
                    let inv = 1.0 / sum;
                    d.iter_mut().for_each(|v| *v *= inv);
                    loss_sum += -(d[labels[r]].max(1e-300)).ln();
                    d[labels[r]] -= 1.0;
                    d.iter_mut().for_each(|v| *v *= scale);
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }

            // backward
            for l in (0..num_layers).rev() {
                let layer = &model.layers[l];
                let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
                let gw = &mut grad_w[l];
                let gb = &mut grad_b[l];
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);

                let input = &acts[l];
                let delta_out = &deltas[l];
                for r in 0..b {
                    let d = &delta_out[r * out_dim..(r + 1) * out_dim];
                    for (slot, &v) in gb.iter_mut().zip(d) {
                        *slot += v;
                    }
                    let x = &input[r * in_dim..(r + 1) * in_dim];
                    for (i, &a) in x.iter().enumerate() {
                        if a != 0.0 {
                            let row = &mut gw[i * out_dim..(i + 1) * out_dim];
                            for (g, &v) in row.iter_mut().zip(d) {
                                *g += a * v;
                            }
                        }
                    }
                }

                if l > 0 {
                    let (d_head, d_tail) = deltas.split_at_mut(l);
                    let delta_in = &mut d_head[l - 1];
                    let delta_out = &d_tail[0];
                    let input = &acts[l];
                    for r in 0..b {
                        let d_out = &delta_out[r * out_dim..(r + 1) * out_dim];
                        let act = &input[r * in_dim..(r + 1) * in_dim];
                        let d_in = &mut delta_in[r * in_dim..(r + 1) * in_dim];
                        for (i, slot) in d_in.iter_mut().enumerate() {
                            if act[i] > 0.0 {
                                let row = &layer.weights[i * out_dim..(i + 1) * out_dim];
                                *slot = row.iter().zip(d_out).map(|(w, d)| w * d).sum();
                            } else {
                                *slot = 0.0;
                            }
                        }
                    }
                }
            }

            // SGD with momentum and L2 penalty
            for l in 0..num_layers {
                let layer = &mut model.layers[l];
                sgd_update(
                    &mut layer.weights,
                    &grad_w[l],
                    &mut vel_w[l],
                    learning_rate,
                    config.momentum,
                    config.weight_decay,
                );
                sgd_update(
                    &mut layer.biases,
                    &grad_b[l],
                    &mut vel_b[l],
                    learning_rate,
                    config.momentum,
                    config.weight_decay,
                );
            }
            batch_index += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
    }

    model.metadata = TrainMetadata {
        config_hash: config.fingerprint(),
        final_train_accuracy: evaluate_accuracy(&model, data)?,
    };
    Ok((model, epoch_losses))
}

fn sgd_update(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let grad = g + weight_decay * *w;
        *v = momentum * *v + grad;
        *w -= learning_rate * *v;
    }
}

/// Fraction of samples the model labels correctly.
pub fn evaluate_accuracy(model: &TrainedModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    let mut correct = 0usize;
    for sample in data.samples() {
        let (label, _) = model.predict(&sample.features)?;
        if label == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_binary, Sample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A tiny linearly separable two-class problem.
    fn toy_separable() -> Dataset {
        let mut samples = Vec::new();
        for i in 0..10 {
            let offset = i as f64 * 0.05;
            samples.push(Sample::new(vec![1.0 + offset, 1.0 - offset], 0).unwrap());
            samples.push(Sample::new(vec![-1.0 - offset, -1.0 + offset], 1).unwrap());
        }
        Dataset::new(samples, 2).unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.1,
            lr_milestones: vec![30],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 1,
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let arch = MlpArchitecture::new(2, vec![4], 3).unwrap();
        let model = TrainedModel::untrained(&arch, 42).unwrap();
        let features = [0.35, -1.2];
        let label = 2;

        let analytic = model.loss_gradients(&features, label).unwrap();
        let params = model.parameters();
        let h = 1e-5;
        for (idx, grad) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus[idx] += h;
            let mut minus = params.clone();
            minus[idx] -= h;
            let mut m = model.clone();
            m.set_parameters(&plus).unwrap();
            let up = m.loss(&features, label).unwrap();
            m.set_parameters(&minus).unwrap();
            let down = m.loss(&features, label).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let denom = grad.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (grad - numeric).abs() / denom < 1e-4,
                "param {idx}: analytic {grad} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_accuracy() {
        let data = toy_separable();
        let arch = MlpArchitecture::new(2, vec![8], 2).unwrap();
        let model = train(&data, &arch, &toy_config()).unwrap();
        assert_eq!(model.metadata().final_train_accuracy, 1.0);
        for sample in data.samples() {
            let (label, _) = model.predict(&sample.features).unwrap();
            assert_eq!(label, sample.label);
        }
    }

    #[test]
    fn smoothed_loss_is_non_increasing_on_toy_set() {
        let data = toy_separable();
        let arch = MlpArchitecture::new(2, vec![8], 2).unwrap();
        // weight decay off so the recorded cross-entropy is the whole objective
        let config = TrainConfig {
            weight_decay: 0.0,
            ..toy_config()
        };
        let (_, losses) = train_traced(&data, &arch, &config).unwrap();
        let window = 10;
        let smoothed: Vec<f64> = losses
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        for pair in smoothed.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{smoothed:?}");
        }
    }

    #[test]
    fn one_step_reduces_to_vanilla_sgd() {
        // single linear layer, zero init, one sample, one epoch:
        // w' = w - lr * dW with dW = x^T (softmax(z) - onehot)
        let arch = MlpArchitecture::new(2, vec![], 2).unwrap();
        let init = TrainedModel::zeroed(&arch).unwrap();
        let data = Dataset::new(vec![Sample::new(vec![1.0, 2.0], 0).unwrap()], 2).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.5,
            lr_milestones: vec![],
            lr_decay_factor: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
        };
        let model = train_from(&init, &data, &config).unwrap();
        // probs = [0.5, 0.5], delta = [-0.5, 0.5]
        let expected = [
            0.25, -0.25, // weight row for x0 = 1.0
            0.5, -0.5, // weight row for x1 = 2.0
            0.25, -0.25, // biases
        ];
        let params = model.parameters();
        for (p, e) in params.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{params:?}");
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = synth_binary(200, 20, 4, 0.1, 3).unwrap();
        let arch = MlpArchitecture::new(20, vec![16], 4).unwrap();
        let mut config = toy_config();
        config.epochs = 5;
        config.lr_milestones = vec![];
        let a = train(&data, &arch, &config).unwrap();
        let b = train(&data, &arch, &config).unwrap();
        assert_eq!(a.parameters(), b.parameters());

        config.seed = 2;
        let c = train(&data, &arch, &config).unwrap();
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn predict_contract() {
        let arch = MlpArchitecture::new(5, vec![4], 4).unwrap();
        let zero = TrainedModel::zeroed(&arch).unwrap();
        let (label, scores) = zero.predict(&[1.0, -2.0, 0.5, 0.0, 3.0]).unwrap();
        assert_eq!(label, 0); // uniform scores, lowest-index tie-break
        for s in &scores {
            assert!((s - 0.25).abs() < 1e-12);
        }

        let model = TrainedModel::untrained(&arch, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let (_, scores) = model.predict(&x).unwrap();
            let sum: f64 = scores.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }

        assert!(model.predict(&[0.0; 3]).is_err());
        assert!(model.predict(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn accuracy_of_constant_predictor_is_chance() {
        let data = synth_binary(120, 10, 4, 0.2, 8).unwrap();
        let arch = MlpArchitecture::new(10, vec![], 4).unwrap();
        let constant = TrainedModel::zeroed(&arch).unwrap();
        // zero parameters always predict class 0; classes are balanced
        assert!((evaluate_accuracy(&constant, &data).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let data = toy_separable();
        let arch = MlpArchitecture::new(2, vec![8], 2).unwrap();
        let model = train(&data, &arch, &toy_config()).unwrap();

        let path = std::env::temp_dir().join(format!("datamark-model-{}.bin", std::process::id()));
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(model, loaded);

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let (l1, s1) = model.predict(&x).unwrap();
            let (l2, s2) = loaded.predict(&x).unwrap();
            assert_eq!(l1, l2);
            assert_eq!(s1, s2);
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn load_rejects_corruption_and_unknown_versions() {
        let arch = MlpArchitecture::new(3, vec![4], 2).unwrap();
        let model = TrainedModel::untrained(&arch, 0).unwrap();
        let dir = std::env::temp_dir();
        let pid = std::process::id();

        let path = dir.join(format!("datamark-trunc-{pid}.bin"));
        model.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(Error::ModelFormat(_))
        ));

        // flip one parameter byte: checksum must catch it
        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0xff;
        fs::write(&path, &corrupted).unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(Error::ModelFormat(_))
        ));

        // unknown version tag
        let mut versioned = bytes.clone();
        versioned[8] = 0x7f;
        fs::write(&path, &versioned).unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(Error::ModelVersion { found: 0x7f, .. })
        ));

        fs::write(&path, b"not a model").unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(Error::ModelFormat(_))
        ));
        fs::remove_file(&path).ok();
    }

    #[test]
    fn train_rejects_mismatched_data() {
        let data = synth_binary(40, 10, 4, 0.1, 0).unwrap();
        let arch = MlpArchitecture::new(12, vec![8], 4).unwrap();
        assert!(matches!(
            train(&data, &arch, &toy_config()),
            Err(Error::DimensionMismatch { .. })
        ));
        let arch = MlpArchitecture::new(10, vec![8], 5).unwrap();
        assert!(matches!(
            train(&data, &arch, &toy_config()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut config = TrainConfig::default();
        assert!(config.validate().is_ok());
        config.lr_milestones = vec![80, 50];
        assert!(config.validate().is_err());
        config.lr_milestones = vec![50, 200];
        assert!(config.validate().is_err());
        config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
