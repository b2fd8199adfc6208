//! Linear probes over mean-pooled spans, and spoken STS scoring.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{self, AlignError};
use crate::interchange::{
    load_representation_sequence, read_json, Corpus, InterchangeError, RepresentationSequence,
    Stage,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no examples survived pooling and filtering")]
    NoExamples,
    #[error("need at least two labels, found {0}")]
    TooFewLabels(usize),
    #[error("corpus has no {0:?}-level alignments")]
    NoAlignments(ProbeLevel),
    #[error("utterance {utterance_id} has no {stage} sequence")]
    MissingStage { utterance_id: String, stage: Stage },
    #[error("single-class training data")]
    Degenerate,
    #[error("training diverged at epoch {epoch}; lower the learning rate")]
    NonFinite { epoch: usize },
    #[error("dimension mismatch: model {expected}, data {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all values in one list are equal")]
    DegenerateRanks,
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLevel {
    Phone,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub features: Vec<f64>,
    /// Index into [`ProbeDataset::labels`].
    pub label: usize,
}

/// Pooled examples with a stratified train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub level: ProbeLevel,
    pub dim: usize,
    /// Sorted distinct labels.
    pub labels: Vec<String>,
    pub examples: Vec<ProbeExample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub min_label_count: usize,
    pub test_fraction: f64,
    pub min_overlap_ms: u64,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            min_label_count: 1,
            test_fraction: 0.2,
            min_overlap_ms: 0,
            seed: 0,
        }
    }
}

impl ProbeDataset {
    /// Builds a dataset from already pooled `(features, label)` pairs, in order.
    ///
    /// Labels seen fewer than `min_label_count` times are dropped. Every
    /// label with at least two examples lands in both splits.
    pub fn from_examples(
        level: ProbeLevel,
        raw: Vec<(Vec<f64>, String)>,
        options: &DatasetOptions,
    ) -> Result<Self, ProbeError> {
        if !(0.0..1.0).contains(&options.test_fraction) {
            return Err(ProbeError::InvalidConfig(format!(
                "test_fraction {} outside [0, 1)",
                options.test_fraction
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, label) in &raw {
            *counts.entry(label).or_default() += 1;
        }
        let labels: Vec<String> = counts
            .iter()
            .filter(|(_, &c)| c >= options.min_label_count)
            .map(|(l, _)| l.to_string())
            .collect();
        let index: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let examples: Vec<ProbeExample> = raw
            .iter()
            .filter_map(|(features, label)| {
                index.get(label.as_str()).map(|&label| ProbeExample {
                    features: features.clone(),
                    label,
                })
            })
            .collect();
        if examples.is_empty() {
            return Err(ProbeError::NoExamples);
        }
        if labels.len() < 2 {
            return Err(ProbeError::TooFewLabels(labels.len()));
        }
        let dim = examples[0].features.len();
        if let Some(bad) = examples.iter().find(|e| e.features.len() != dim) {
            return Err(ProbeError::DimMismatch {
                expected: dim,
                found: bad.features.len(),
            });
        }

        let mut by_label = vec![Vec::new(); labels.len()];
        for (i, e) in examples.iter().enumerate() {
            by_label[e.label].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut members in by_label {
            members.shuffle(&mut rng);
            let n = members.len();
            let n_test = if n < 2 {
                0
            } else {
                ((n as f64 * options.test_fraction).round() as usize).clamp(1, n - 1)
            };
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self {
            level,
            dim,
            labels,
            examples,
            train,
            test,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ProbeExample> {
        let idx = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        idx.iter().map(|&i| &self.examples[i])
    }
}

/// Mean-pools `stage` over every aligned word or phone in `corpus`.
///
/// Units without an overlapping frame are skipped. Utterances are pooled in
/// parallel but examples keep corpus order.
pub fn build_probe_dataset(
    corpus: &Corpus,
    stage: Stage,
    level: ProbeLevel,
    options: &DatasetOptions,
) -> Result<ProbeDataset, ProbeError> {
    let per_utterance = (0..corpus.len())
        .into_par_iter()
        .map(|i| -> Result<(bool, Vec<(Vec<f64>, String)>), ProbeError> {
            let u = corpus.utterance(i)?;
            let seq = u.sequence(stage).ok_or_else(|| ProbeError::MissingStage {
                utterance_id: u.record.utterance_id.clone(),
                stage,
            })?;
            let units: Vec<(Vec<usize>, &str)> = match level {
                ProbeLevel::Word => align::assign_words(&u.record, seq, options.min_overlap_ms)?
                    .into_iter()
                    .map(|a| {
                        (
                            a.frame_indices,
                            u.record.transcript_words[a.word_index].surface.as_str(),
                        )
                    })
                    .collect(),
                ProbeLevel::Phone => align::assign_phones(&u.record, seq, options.min_overlap_ms)?
                    .into_iter()
                    .zip(&u.record.transcript_phones)
                    .map(|(frames, p)| (frames, p.phone.as_str()))
                    .collect(),
            };
            let has_units = !units.is_empty();
            let pooled = units
                .into_iter()
                .filter(|(frames, _)| !frames.is_empty())
                .map(|(frames, label)| Ok((align::pool_span(seq, &frames)?, label.to_owned())))
                .collect::<Result<Vec<_>, AlignError>>()?;
            Ok((has_units, pooled))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !per_utterance.iter().any(|(has, _)| *has) {
        return Err(ProbeError::NoAlignments(level));
    }
    let raw = per_utterance.into_iter().flat_map(|(_, v)| v).collect();
    ProbeDataset::from_examples(level, raw, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub labels: Vec<String>,
    pub dim: usize,
    /// Row-major `labels.len() x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-feature shift and scale applied before the linear map.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub config: TrainConfig,
    /// Training objective after each epoch.
    pub loss_history: Vec<f64>,
}

impl ProbeModel {
    /// A model with all parameters zero and identity scaling.
    pub fn zeros(labels: Vec<String>, dim: usize) -> Self {
        let k = labels.len();
        Self {
            labels,
            dim,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
            feature_mean: vec![0.0; dim],
            feature_scale: vec![1.0; dim],
            config: TrainConfig::default(),
            loss_history: Vec::new(),
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for (((o, &v), m), s) in out
            .iter_mut()
            .zip(x)
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
        {
            *o = (v - m) / s;
        }
    }

    fn logits(&self, z: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Index of the highest logit; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ProbeError> {
        if x.len() != self.dim {
            return Err(ProbeError::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut z = vec![0.0; self.dim];
        let mut logits = vec![0.0; self.labels.len()];
        self.standardize(x, &mut z);
        self.logits(&z, &mut logits);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|l| *l /= sum);
    max + sum.ln()
}

fn objective(model: &ProbeModel, data: &[(Vec<f64>, usize)], l2: f64) -> f64 {
    let mut logits = vec![0.0; model.labels.len()];
    let mut total = 0.0;
    for (z, y) in data {
        model.logits(z, &mut logits);
        let target = logits[*y];
        total += softmax_in_place(&mut logits) - target;
    }
    let penalty = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    total / data.len() as f64 + penalty
}

/// Trains a softmax probe on the train split by mini-batch gradient descent
/// from zero initialisation. Batch order is drawn from `config.seed`.
pub fn train_linear_probe(
    dataset: &ProbeDataset,
    config: &TrainConfig,
) -> Result<ProbeModel, ProbeError> {
    if config.epochs == 0
        || config.batch_size == 0
        || !(config.learning_rate > 0.0)
        || !(config.l2 >= 0.0)
    {
        return Err(ProbeError::InvalidConfig(format!("{config:?}")));
    }
    let train: Vec<&ProbeExample> = dataset.split(Split::Train).collect();
    if train.is_empty() {
        return Err(ProbeError::NoExamples);
    }
    let k = dataset.labels.len();
    let d = dataset.dim;
    if train.iter().all(|e| e.label == train[0].label) {
        return Err(ProbeError::Degenerate);
    }

    let mut model = ProbeModel::zeros(dataset.labels.clone(), d);
    model.config = *config;
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|e| e.features[j]).sum::<f64>() / n;
        let var = train
            .iter()
            .map(|e| (e.features[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        model.feature_mean[j] = mean;
        model.feature_scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let data: Vec<(Vec<f64>, usize)> = train
        .iter()
        .map(|e| {
            let mut z = vec![0.0; d];
            model.standardize(&e.features, &mut z);
            (z, e.label)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (z, y) = &data[i];
                model.logits(z, &mut probs);
                softmax_in_place(&mut probs);
                probs[*y] -= 1.0;
                for (c, &p) in probs.iter().enumerate() {
                    grad_b[c] += p;
                    for (g, &x) in grad_w[c * d..(c + 1) * d].iter_mut().zip(z) {
                        *g += p * x;
                    }
                }
            }
            let m = batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= config.learning_rate * (g / m + config.l2 * *w);
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= config.learning_rate * g / m;
            }
        }
        let loss = objective(&model, &data, config.l2);
        if !loss.is_finite()
            || model
                .weights
                .iter()
                .chain(&model.bias)
                .any(|v| !v.is_finite())
        {
            return Err(ProbeError::NonFinite { epoch });
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Top-1 accuracy of `model` on one split of `dataset`.
pub fn evaluate_probe(
    model: &ProbeModel,
    dataset: &ProbeDataset,
    split: Split,
) -> Result<f64, ProbeError> {
    if model.dim != dataset.dim {
        return Err(ProbeError::DimMismatch {
            expected: model.dim,
            found: dataset.dim,
        });
    }
    let examples: Vec<&ProbeExample> = dataset.split(split).collect();
    if examples.is_empty() {
        return Err(ProbeError::NoExamples);
    }
    let correct = examples
        .par_iter()
        .map(|e| {
            Ok(usize::from(
                model.labels[model.predict(&e.features)?] == dataset.labels[e.label],
            ))
        })
        .collect::<Result<Vec<_>, ProbeError>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ProbeError> {
    if xs.len() != ys.len() {
        return Err(ProbeError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(ProbeError::TooFewPoints(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFiniteInput);
    }
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or(ProbeError::DegenerateRanks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StsResult {
    pub rho: f64,
    pub num_pairs: usize,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Spearman correlation between pooled-sentence cosines and human scores.
pub fn sts_eval(
    pairs: &[(RepresentationSequence, RepresentationSequence, f64)],
) -> Result<StsResult, ProbeError> {
    if pairs.len() < 3 {
        return Err(ProbeError::TooFewPoints(pairs.len()));
    }
    let cosines: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b, _)| {
            if a.dim() != b.dim() {
                return Err(ProbeError::DimMismatch {
                    expected: a.dim(),
                    found: b.dim(),
                });
            }
            Ok(cosine(&align::pool_all(a), &align::pool_all(b)))
        })
        .collect::<Result<_, _>>()?;
    let human: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    Ok(StsResult {
        rho: spearman(&cosines, &human)?,
        num_pairs: pairs.len(),
    })
}

/// One line of an STS pair list; paths are relative to the list file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StsPairEntry {
    pub a: PathBuf,
    pub b: PathBuf,
    pub score: f64,
}

/// Loads a JSON array of [`StsPairEntry`] and the sequences it names.
pub fn load_sts_pairs(
    path: &Path,
) -> Result<Vec<(RepresentationSequence, RepresentationSequence, f64)>, ProbeError> {
    let entries: Vec<StsPairEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .par_iter()
        .map(|e| {
            Ok((
                load_representation_sequence(&base.join(&e.a))?,
                load_representation_sequence(&base.join(&e.b))?,
                e.score,
            ))
        })
        .collect()
}
