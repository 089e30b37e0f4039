//! Logistic-regression model, local training, evaluation, data partitioning and
//! the coordinator side of sequential ("vanilla") federated learning.

use crate::crypto;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("training diverged to non-finite parameters")]
    Divergence,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed model text: {0}")]
    Malformed(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub version: u64,
}

impl ModelParams {
    pub fn zeros(d: usize) -> Self {
        ModelParams {
            weights: vec![0.0; d],
            bias: 0.0,
            version: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// SHA-256 of the text encoding; identifies a parameter set across the wire.
    pub fn fingerprint(&self) -> [u8; 32] {
        crypto::digest(serialize_model(self).as_bytes())
    }
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, FlError> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() {
            return Err(FlError::InvalidDataset("dataset is empty".into()));
        }
        if rows.len() != labels.len() {
            return Err(FlError::InvalidDataset(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(FlError::Shape {
                expected: d,
                actual: bad.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(FlError::InvalidDataset("labels must be 0 or 1".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(FlError::InvalidDataset("features must be finite".into()));
        }
        Ok(Dataset {
            d,
            features: rows.into_iter().flatten().collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], u8)> {
        self.features.chunks(self.d.max(1)).zip(self.labels.iter().copied())
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            d: self.d,
            features,
            labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 50,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is allowed: it yields a no-op training step.
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(FlError::InvalidConfig("learning_rate must be a non-negative finite number".into()));
        }
        if self.epochs == 0 {
            return Err(FlError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(FlError::InvalidConfig("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dim(model: &ModelParams, d: usize) -> Result<(), FlError> {
    if model.dim() != d {
        return Err(FlError::Shape {
            expected: model.dim(),
            actual: d,
        });
    }
    Ok(())
}

fn logit(model: &ModelParams, row: &[f64]) -> f64 {
    model.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + model.bias
}

pub fn predict(model: &ModelParams, row: &[f64]) -> Result<f64, FlError> {
    check_dim(model, row.len())?;
    Ok(sigmoid(logit(model, row)))
}

/// Mean binary cross-entropy, computed from logits for numerical stability.
pub fn loss(model: &ModelParams, data: &Dataset) -> Result<f64, FlError> {
    check_dim(model, data.dim())?;
    let total: f64 = data
        .rows()
        .map(|(x, y)| {
            let z = logit(model, x);
            // log(1 + e^z) - y z
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - f64::from(y) * z
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Gradient of [`loss`] with respect to (weights, bias).
pub fn gradient(model: &ModelParams, data: &Dataset) -> Result<(Vec<f64>, f64), FlError> {
    check_dim(model, data.dim())?;
    let n = data.len() as f64;
    let mut gw = vec![0.0; model.dim()];
    let mut gb = 0.0;
    for (x, y) in data.rows() {
        let err = sigmoid(logit(model, x)) - f64::from(y);
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += err * xi;
        }
        gb += err;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    Ok((gw, gb / n))
}

/// Full-batch gradient descent for `config.epochs` steps. Returns a new model one version ahead.
pub fn train_local(model: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<ModelParams, FlError> {
    config.validate()?;
    check_dim(model, data.dim())?;
    let mut next = model.clone();
    for _ in 0..config.epochs {
        let (gw, gb) = gradient(&next, data)?;
        for (w, g) in next.weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        next.bias -= config.learning_rate * gb;
    }
    if !next.is_finite() {
        return Err(FlError::Divergence);
    }
    next.version = model.version + 1;
    Ok(next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// A probability equal to the threshold counts as positive.
pub fn evaluate(model: &ModelParams, data: &Dataset, threshold: f64) -> Result<ConfusionMatrix, FlError> {
    check_dim(model, data.dim())?;
    let mut m = ConfusionMatrix::default();
    for (x, y) in data.rows() {
        let positive = sigmoid(logit(model, x)) >= threshold;
        match (positive, y == 1) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionRole {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub role: PartitionRole,
    pub data: Dataset,
}

/// Seeded shuffle, then `k` near-equal parts (larger parts first). The last part validates.
pub fn partition(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Partition>, FlError> {
    if k < 2 {
        return Err(FlError::InvalidConfig("need at least one training and one validation part".into()));
    }
    if dataset.len() < k {
        return Err(FlError::InvalidDataset(format!("{} rows cannot fill {k} partitions", dataset.len())));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let base = dataset.len() / k;
    let extra = dataset.len() % k;
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        parts.push(Partition {
            role: if i + 1 == k {
                PartitionRole::Validation
            } else {
                PartitionRole::Train
            },
            data: dataset.select(&order[start..start + size]),
        });
        start += size;
    }
    Ok(parts)
}

/// Text form: `d=`, `version=`, `bias=` and `w=` lines. Floats use Rust's
/// shortest round-trip formatting, so decoding is exact.
pub fn serialize_model(model: &ModelParams) -> String {
    let weights: Vec<String> = model.weights.iter().map(|w| format!("{w:?}")).collect();
    format!(
        "d={}\nversion={}\nbias={:?}\nw={}",
        model.dim(),
        model.version,
        model.bias,
        weights.join(",")
    )
}

pub fn deserialize_model(text: &str, expected_dim: Option<usize>) -> Result<ModelParams, FlError> {
    let mut lines = text.split('\n');
    let mut field = |name: &str| -> Result<&str, FlError> {
        let line = lines
            .next()
            .ok_or_else(|| FlError::Malformed(format!("missing {name} line")))?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| FlError::Malformed(format!("expected {name}=, got {line:?}")))
    };
    let parse_f = |s: &str| -> Result<f64, FlError> {
        let v: f64 = s.parse().map_err(|_| FlError::Malformed(format!("bad number {s:?}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FlError::Malformed(format!("non-finite value {s:?}")))
        }
    };
    let d: usize = field("d")?
        .parse()
        .map_err(|_| FlError::Malformed("bad d".into()))?;
    let version: u64 = field("version")?
        .parse()
        .map_err(|_| FlError::Malformed("bad version".into()))?;
    let bias = parse_f(field("bias")?)?;
    let w = field("w")?;
    let weights = if w.is_empty() {
        Vec::new()
    } else {
        w.split(',').map(parse_f).collect::<Result<Vec<_>, _>>()?
    };
    if lines.next().is_some() {
        return Err(FlError::Malformed("trailing content".into()));
    }
    if weights.len() != d {
        return Err(FlError::Malformed(format!("d={d} but {} weights", weights.len())));
    }
    if let Some(expected) = expected_dim {
        if expected != d {
            return Err(FlError::Shape { expected, actual: d });
        }
    }
    Ok(ModelParams { weights, bias, version })
}

/// Two unit-variance Gaussian clusters whose means lie `separation` apart along the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub separation: f64,
    pub seed: u64,
}

pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset, FlError> {
    if spec.n == 0 || spec.d == 0 {
        return Err(FlError::InvalidDataset("n and d must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let offset = spec.separation / 2.0 / (spec.d as f64).sqrt();
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = u8::from(i % 2 == 1);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let row: Vec<f64> = (0..spec.d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sign * offset + z
            })
            .collect();
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels)
}

/// Flips each label independently with probability `rate`.
pub fn with_label_noise(data: &Dataset, rate: f64, seed: u64) -> Result<Dataset, FlError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(FlError::InvalidConfig(format!("label noise {rate} outside [0, 1]")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for y in out.labels.iter_mut() {
        let u: f64 = rand::Rng::gen(&mut rng);
        if u < rate {
            *y = 1 - *y;
        }
    }
    Ok(out)
}

/// CSV with a header row; the last column is the 0/1 label.
pub fn load_csv(path: &Path) -> Result<Dataset, FlError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FlError::InvalidDataset(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FlError::InvalidDataset(e.to_string()))?;
        let values: Vec<&str> = record.iter().collect();
        let (label, features) = values
            .split_last()
            .ok_or_else(|| FlError::InvalidDataset(format!("row {} is empty", line + 1)))?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(FlError::InvalidDataset(format!("row {}: label {other:?}", line + 1))),
        };
        let row = features
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| FlError::InvalidDataset(format!("row {}: bad number {s:?}", line + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels)
}

/// One benchmark of the coordinator's model against its validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub trainer: Option<String>,
    pub model_version: u64,
    pub matrix: ConfusionMatrix,
}

/// Parameters handed to a trainer and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub batch: usize,
    pub trainer: String,
    pub sent_version: u64,
    #[serde(with = "crate::encoding::hex_array")]
    pub sent_hash: [u8; 32],
    pub returned_version: u64,
    #[serde(with = "crate::encoding::hex_array")]
    pub returned_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub trainer: String,
    pub model_text: String,
}

/// The coordinator's side of sequential federated learning: benchmark, send to the
/// next trainer, wait for its result, repeat, and benchmark the final model.
#[derive(Debug, Clone)]
pub struct SequentialRun {
    order: Vec<String>,
    next: usize,
    model: ModelParams,
    validation: Dataset,
    threshold: f64,
    batches: Vec<BatchRecord>,
    lineage: Vec<LineageEntry>,
    awaiting: Option<(String, u64, [u8; 32])>,
    started: bool,
}

impl SequentialRun {
    pub fn new(model: ModelParams, validation: Dataset, order: Vec<String>, threshold: f64) -> Result<Self, FlError> {
        check_dim(&model, validation.dim())?;
        Ok(SequentialRun {
            order,
            next: 0,
            model,
            validation,
            threshold,
            batches: Vec::new(),
            lineage: Vec::new(),
            awaiting: None,
            started: false,
        })
    }

    fn benchmark(&mut self, trainer: Option<String>) -> Result<(), FlError> {
        let matrix = evaluate(&self.model, &self.validation, self.threshold)?;
        self.batches.push(BatchRecord {
            batch: self.batches.len(),
            trainer,
            model_version: self.model.version,
            matrix,
        });
        Ok(())
    }

    fn dispatch_next(&mut self) -> Option<Dispatch> {
        let trainer = self.order.get(self.next)?.clone();
        self.next += 1;
        let model_text = serialize_model(&self.model);
        self.awaiting = Some((trainer.clone(), self.model.version, self.model.fingerprint()));
        Some(Dispatch { trainer, model_text })
    }

    /// Benchmarks the initial model and returns the first hand-off, if any.
    pub fn start(&mut self) -> Result<Option<Dispatch>, FlError> {
        if self.started {
            return Err(FlError::Protocol("run already started".into()));
        }
        self.started = true;
        self.benchmark(None)?;
        Ok(self.dispatch_next())
    }

    pub fn accept_result(&mut self, trainer: &str, model_text: &str) -> Result<Option<Dispatch>, FlError> {
        let (expected, sent_version, sent_hash) = self
            .awaiting
            .clone()
            .ok_or_else(|| FlError::Protocol(format!("unsolicited result from {trainer}")))?;
        if expected != trainer {
            return Err(FlError::Protocol(format!("result from {trainer} while waiting for {expected}")));
        }
        let returned = deserialize_model(model_text, Some(self.model.dim()))?;
        if returned.version != sent_version + 1 {
            return Err(FlError::Protocol(format!(
                "{trainer} returned version {} for version {sent_version}",
                returned.version
            )));
        }
        self.awaiting = None;
        self.lineage.push(LineageEntry {
            batch: self.batches.len(),
            trainer: trainer.to_string(),
            sent_version,
            sent_hash,
            returned_version: returned.version,
            returned_hash: returned.fingerprint(),
        });
        self.model = returned;
        self.benchmark(Some(trainer.to_string()))?;
        Ok(self.dispatch_next())
    }

    pub fn awaiting(&self) -> Option<&str> {
        self.awaiting.as_ref().map(|(t, _, _)| t.as_str())
    }

    pub fn is_finished(&self) -> bool {
        self.started && self.awaiting.is_none() && self.next >= self.order.len()
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tp={} fp={} tn={} fn={}", self.tp, self.fp, self.tn, self.fn_)
    }
}
