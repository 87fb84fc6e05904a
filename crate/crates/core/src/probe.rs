//! Multi-label linear probes over frozen encoder embeddings.
//!
//! A probe is one affine layer, `logits = W x + b`, with one output per label
//! and a sigmoid on top at inference time. Training minimises the mean
//! binary cross-entropy on logits. Weights start at zero, so a run is fully
//! determined by the config seed, which only drives the per-epoch shuffle.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{shuffled_indices, EmbeddingFrame};
use crate::error::{Error, Result};
use crate::metrics::{self, AccuracyReport, AucReport};
use crate::par::{self, Execution};
use crate::types::{ConfidenceScore, DetectionMap, LabelSet, LabelSetRef, Labels};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"CXRP";
pub const WEIGHTS_VERSION: u32 = 1;

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-element loss `-[y log s(z) + (1-y) log(1-s(z))]` in its stable form.
fn bce_term(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

/// Mean binary cross-entropy over logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(logits, targets)?;
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    let sum: f64 = logits.iter().zip(targets).map(|(&z, &y)| bce_term(z, y)).sum();
    Ok(sum / logits.len() as f64)
}

/// Gradient of [`bce_with_logits`] with respect to each logit.
pub fn bce_with_logits_grad(logits: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check_targets(logits, targets)?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| (sigmoid(z) - y) / n)
        .collect())
}

fn check_targets(logits: &[f64], targets: &[f64]) -> Result<()> {
    if logits.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid("targets must be 0 or 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain minibatch gradient descent.
    Sgd,
    /// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, learning_rate: f64, seed: u64, optimizer: Optimizer) -> Result<Self> {
        let c = Self {
            batch_size,
            epochs,
            learning_rate,
            seed,
            optimizer,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    /// Batch 256, 20 epochs, learning rate 1e-3.
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 20,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpace {
    pub batch_sizes: Vec<usize>,
    pub epochs_options: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridSearchSpace {
    /// 5 batch sizes x 3 epoch counts x 3 learning rates.
    fn default() -> Self {
        Self {
            batch_sizes: vec![64, 128, 256, 512, 1024],
            epochs_options: vec![10, 20, 40],
            learning_rates: vec![1e-5, 1e-4, 1e-3],
        }
    }
}

impl GridSearchSpace {
    pub fn len(&self) -> usize {
        self.batch_sizes.len() * self.epochs_options.len() * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, batch-major, with `base` supplying seed and optimizer.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &batch_size in &self.batch_sizes {
            for &epochs in &self.epochs_options {
                for &learning_rate in &self.learning_rates {
                    out.push(TrainConfig {
                        batch_size,
                        epochs,
                        learning_rate,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    /// Mean training loss over the full frame at the end of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl Provenance {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights {
    label_set: LabelSetRef,
    dim: usize,
    /// Row-major `labels x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    provenance: Option<Provenance>,
}

impl ProbeWeights {
    pub fn new(label_set: LabelSetRef, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("probe dim must be positive"));
        }
        if weights.len() != label_set.len() * dim || bias.len() != label_set.len() {
            return Err(Error::Consistency(format!(
                "weights {} / bias {} do not match {} labels x {dim}",
                weights.len(),
                bias.len(),
                label_set.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("probe weights must be finite"));
        }
        Ok(Self {
            label_set,
            dim,
            weights,
            bias,
            provenance: None,
        })
    }

    pub fn zeros(label_set: LabelSetRef, dim: usize) -> Result<Self> {
        let n = label_set.len();
        Self::new(label_set, dim, vec![0.0; n * dim], vec![0.0; n])
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = Some(p);
        self
    }

    /// Replaces the label metadata; the label names and order must not change.
    pub fn with_label_set(mut self, label_set: LabelSetRef) -> Result<Self> {
        if label_set.labels() != self.label_set.labels() {
            return Err(Error::Consistency("replacement label set has different labels".into()));
        }
        self.label_set = label_set;
        Ok(self)
    }

    pub fn label_set(&self) -> &LabelSetRef {
        &self.label_set
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn logits<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "embedding has dim {}, probe expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked<T: Copy + Into<f64>>(&self, x: &[T]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, &xi)| w * xi.into()).sum::<f64>() + b)
            .collect()
    }

    /// Per-label sigmoid probabilities.
    pub fn predict<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<DetectionMap> {
        let scores = self
            .logits(x)?
            .into_iter()
            .map(|z| ConfidenceScore::clamped(sigmoid(z)))
            .collect();
        DetectionMap::new(self.label_set.clone(), scores)
    }

    pub fn predict_frame(&self, frame: &EmbeddingFrame, exec: Execution) -> Result<Vec<DetectionMap>> {
        if frame.dim() != self.dim {
            return Err(Error::invalid(format!(
                "frame has dim {}, probe expects {}",
                frame.dim(),
                self.dim
            )));
        }
        if frame.label_set().labels() != self.label_set.labels() {
            return Err(Error::Consistency("frame and probe use different label sets".into()));
        }
        let emb = frame.embeddings();
        par::map_range(exec, frame.len(), |i| self.predict(emb.row(i)))
            .into_iter()
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.label_set.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for l in self.label_set.labels() {
            out.extend_from_slice(&(l.len() as u32).to_le_bytes());
            out.extend_from_slice(l.as_bytes());
        }
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        // optional trailer: length-prefixed JSON with label-set metadata and provenance
        let meta = serde_json::to_vec(&WeightsMeta {
            label_set: (*self.label_set).clone(),
            provenance: self.provenance.clone(),
        })?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, at: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::format("bad weights magic, expected \"CXRP\""));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(format!("unsupported weights version {version}")));
        }
        let n_labels = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut names = Vec::with_capacity(n_labels.min(4096));
        for _ in 0..n_labels {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            names.push(String::from_utf8(raw.to_vec()).map_err(|_| Error::format("label name is not UTF-8"))?);
        }
        let n_weights = n_labels
            .checked_mul(dim)
            .ok_or_else(|| Error::format("weights header overflows"))?;
        let weights = r.f64s(n_weights)?;
        let bias = r.f64s(n_labels)?;
        let meta: Option<WeightsMeta> = if r.remaining() == 0 {
            None
        } else {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            if r.remaining() != 0 {
                return Err(Error::format("trailing bytes after weights metadata"));
            }
            Some(serde_json::from_slice(raw)?)
        };
        let (label_set, provenance) = match meta {
            Some(m) => {
                if m.label_set.labels() != names.as_slice() {
                    return Err(Error::format("metadata label set disagrees with header labels"));
                }
                (m.label_set, m.provenance)
            }
            None => (LabelSet::new("probe", names)?, None),
        };
        let mut p = Self::new(Arc::new(label_set), dim, weights, bias)?;
        p.provenance = provenance;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsMeta {
    label_set: LabelSet,
    provenance: Option<Provenance>,
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("weights file truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("weights header overflows"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Mean loss of `params` (weights then bias) over the whole frame.
fn frame_loss(frame: &EmbeddingFrame, params: &[f64], n_labels: usize) -> f64 {
    let dim = frame.dim();
    let (w, b) = params.split_at(n_labels * dim);
    let emb = frame.embeddings();
    let mut sum = 0.0;
    for (i, rec) in frame.records().iter().enumerate() {
        let x = emb.row(i);
        for (j, (row, bj)) in w.chunks_exact(dim).zip(b).enumerate() {
            let z = row.iter().zip(x).map(|(wv, &xv)| wv * xv as f64).sum::<f64>() + bj;
            sum += bce_term(z, rec.labels[j] as f64);
        }
    }
    sum / (frame.len() * n_labels) as f64
}

pub fn train(frame: &EmbeddingFrame, config: &TrainConfig) -> Result<ProbeWeights> {
    config.validate()?;
    if frame.is_empty() {
        return Err(Error::invalid("cannot train on an empty frame"));
    }
    let n_labels = frame.label_set().len();
    let dim = frame.dim();
    let n_w = n_labels * dim;
    // weights then bias, one flat parameter vector
    let mut params = vec![0.0f64; n_w + n_labels];
    let mut grad = vec![0.0f64; params.len()];
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb = frame.embeddings();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut logits = vec![0.0f64; n_labels];

    for epoch in 0..config.epochs {
        let order = shuffled_indices(frame.len(), &mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / (batch.len() * n_labels) as f64;
            for &i in batch {
                let x = emb.row(i);
                let labels = &frame.records()[i].labels;
                let (w, b) = params.split_at(n_w);
                for (j, z) in logits.iter_mut().enumerate() {
                    *z = w[j * dim..(j + 1) * dim]
                        .iter()
                        .zip(x)
                        .map(|(wv, &xv)| wv * xv as f64)
                        .sum::<f64>()
                        + b[j];
                }
                for (j, &z) in logits.iter().enumerate() {
                    let g = (sigmoid(z) - labels[j] as f64) * scale;
                    for (gw, &xv) in grad[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                        *gw += g * xv as f64;
                    }
                    grad[n_w + j] += g;
                }
            }
            step(&mut params, &grad, config, &mut adam);
        }
        let loss = frame_loss(frame, &params, n_labels);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1, loss });
        }
        losses.push(loss);
    }

    let bias = params.split_off(n_w);
    Ok(
        ProbeWeights::new(frame.label_set().clone(), dim, params, bias)?.with_provenance(Provenance {
            config: *config,
            dataset_fingerprint: frame.fingerprint(),
            epoch_losses: losses,
        }),
    )
}

fn step(params: &mut [f64], grad: &[f64], config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam => {
            adam.t += 1;
            let c1 = 1.0 - AdamState::BETA1.powi(adam.t);
            let c2 = 1.0 - AdamState::BETA2.powi(adam.t);
            for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut adam.m).zip(&mut adam.v) {
                *m = AdamState::BETA1 * *m + (1.0 - AdamState::BETA1) * g;
                *v = AdamState::BETA2 * *v + (1.0 - AdamState::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + AdamState::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeEvaluation {
    pub threshold: f64,
    pub accuracy: AccuracyReport,
    pub auc: AucReport,
    pub top1: f64,
}

pub fn evaluate(
    weights: &ProbeWeights,
    frame: &EmbeddingFrame,
    threshold: f64,
    exec: Execution,
) -> Result<ProbeEvaluation> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let detections = weights.predict_frame(frame, exec)?;
    let set = frame.label_set();
    let preds: Vec<Labels> = detections.iter().map(|d| d.binary_prediction_set(threshold)).collect();
    let refs: Vec<Labels> = frame.records().iter().map(|r| r.positive_set(set)).collect();
    let scores: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| d.scores().iter().map(|s| s.value()).collect())
        .collect();
    let labels: Vec<Vec<u8>> = frame.records().iter().map(|r| r.labels.clone()).collect();
    Ok(ProbeEvaluation {
        threshold,
        accuracy: metrics::exact_match_accuracy(&preds, &refs)?,
        auc: metrics::roc_auc_with(exec, &scores, &labels)?,
        top1: metrics::top_k_accuracy(&detections, &refs, 1)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ExactMatch,
    SingleMatch,
    MacroAuc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub config: TrainConfig,
    /// Value of the selection metric on the validation frame.
    pub score: f64,
    pub exact_match: f64,
    pub single_match: Option<f64>,
    pub macro_auc: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub best: TrainConfig,
    /// Sorted best first.
    pub leaderboard: Vec<LeaderboardEntry>,
    /// Best minus worst validation exact-match accuracy.
    pub exact_match_spread: f64,
}

/// Trains one probe per configuration on `train` and ranks them on `val`.
/// Ties go to the smaller learning rate, then smaller batch, then fewer epochs.
pub fn grid_search(
    train_frame: &EmbeddingFrame,
    val_frame: &EmbeddingFrame,
    space: &GridSearchSpace,
    metric: SelectionMetric,
    base: &TrainConfig,
    exec: Execution,
) -> Result<GridSearchResult> {
    if space.is_empty() {
        return Err(Error::invalid("grid search space is empty"));
    }
    if val_frame.is_empty() {
        return Err(Error::invalid("grid search needs a non-empty validation frame"));
    }
    let configs = space.configs(base);
    for c in &configs {
        c.validate()?;
    }
    // configs train independently; evaluation inside each stays sequential
    let results = par::map(exec, &configs, |c| -> Result<LeaderboardEntry> {
        let w = train(train_frame, c)?;
        let ev = evaluate(
            &w,
            val_frame,
            crate::types::DEFAULT_DECISION_THRESHOLD,
            Execution::Sequential,
        )?;
        let score = match metric {
            SelectionMetric::ExactMatch => ev.accuracy.overall,
            SelectionMetric::SingleMatch => ev.accuracy.single_match.unwrap_or(0.0),
            SelectionMetric::MacroAuc => ev.auc.macro_average.unwrap_or(0.0),
        };
        Ok(LeaderboardEntry {
            config: *c,
            score,
            exact_match: ev.accuracy.overall,
            single_match: ev.accuracy.single_match,
            macro_auc: ev.auc.macro_average,
            final_train_loss: w.provenance().and_then(Provenance::final_loss).unwrap_or(f64::NAN),
        })
    });
    let mut leaderboard = results.into_iter().collect::<Result<Vec<_>>>()?;
    leaderboard.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.config.learning_rate.total_cmp(&b.config.learning_rate))
            .then(a.config.batch_size.cmp(&b.config.batch_size))
            .then(a.config.epochs.cmp(&b.config.epochs))
    });
    let best_em = leaderboard
        .iter()
        .map(|e| e.exact_match)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_em = leaderboard.iter().map(|e| e.exact_match).fold(f64::INFINITY, f64::min);
    Ok(GridSearchResult {
        best: leaderboard[0].config,
        leaderboard,
        exact_match_spread: best_em - worst_em,
    })
}

pub fn leaderboard_table(result: &GridSearchResult) -> metrics::TextTable {
    let mut t = metrics::TextTable::new([
        "Rank",
        "Batch",
        "Epochs",
        "LR",
        "Score",
        "Exact match (%)",
        "Single match (%)",
        "Macro AUC",
        "Train loss",
    ]);
    for (i, e) in result.leaderboard.iter().enumerate() {
        t.push([
            (i + 1).to_string(),
            e.config.batch_size.to_string(),
            e.config.epochs.to_string(),
            format!("{:e}", e.config.learning_rate),
            format!("{:.4}", e.score),
            metrics::pct(Some(e.exact_match)),
            metrics::pct(e.single_match),
            metrics::num(e.macro_auc, 3),
            format!("{:.5}", e.final_train_loss),
        ]);
    }
    t
}
