//! Concept-bottleneck difficulty scores.
//!
//! Visual embeddings are projected onto the bottleneck concepts, a linear
//! layer `W` (classes × concepts) is fit with mini-batch SGD on the
//! cross-entropy loss, and the margin of every sample is recorded after each
//! epoch. The area under the margin (the mean over epochs) is the sample's
//! difficulty: low values flag hard or mislabeled samples.
//!
//! All arithmetic past the embedding files runs in `f64`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor_io::{EmbeddingMatrix, FormatError, LabelVector, ScoreEntry, ScoreTable};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("margin trajectory is empty")]
    EmptyTrajectory,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Dense row-major `f64` matrix of features (concept similarities, or raw
/// embeddings when used as a plain linear probe).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ScoreError> {
        if data.len() != rows * cols {
            return Err(ScoreError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::InvalidConfig("non-finite feature".into()));
        }
        Ok(SimilarityMatrix { rows, cols, data })
    }

    /// Uses embedding rows directly as features.
    pub fn from_embeddings(m: &EmbeddingMatrix) -> Self {
        SimilarityMatrix {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SimilarityMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `out[i][j] = <visual_i, concept_j>`.
pub fn concept_similarity(
    visual: &EmbeddingMatrix,
    concepts: &EmbeddingMatrix,
) -> Result<SimilarityMatrix, ScoreError> {
    if visual.cols() != concepts.cols() {
        return Err(ScoreError::DimensionMismatch(format!(
            "visual dimension {} vs concept dimension {}",
            visual.cols(),
            concepts.cols()
        )));
    }
    let mut data = Vec::with_capacity(visual.rows() * concepts.rows());
    for v in visual.iter_rows() {
        data.extend(concepts.iter_rows().map(|c| dot(v, c)));
    }
    Ok(SimilarityMatrix {
        rows: visual.rows(),
        cols: concepts.rows(),
        data,
    })
}

/// Zero-shot class assignment: the prompt embedding with the largest dot
/// product wins, ties going to the smaller class index.
pub fn zero_shot_pseudo_labels(
    visual: &EmbeddingMatrix,
    prompts: &EmbeddingMatrix,
) -> Result<LabelVector, ScoreError> {
    if visual.cols() != prompts.cols() {
        return Err(ScoreError::DimensionMismatch(format!(
            "visual dimension {} vs prompt dimension {}",
            visual.cols(),
            prompts.cols()
        )));
    }
    if prompts.rows() == 0 {
        return Err(ScoreError::DimensionMismatch("no class prompts".into()));
    }
    let labels = visual
        .iter_rows()
        .map(|v| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (j, p) in prompts.iter_rows().enumerate() {
                let s = dot(v, p);
                if s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            best as u32
        })
        .collect();
    Ok(LabelVector::new(labels, prompts.rows() as u32)?)
}

/// What the margin is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Softmax probabilities; margins lie in `[-1, 1]`.
    #[default]
    Softmax,
    /// Raw logits.
    Logit,
}

impl std::str::FromStr for Likelihood {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Likelihood::Softmax),
            "logit" => Ok(Likelihood::Logit),
            other => Err(format!("unknown likelihood {other:?} (softmax|logit)")),
        }
    }
}

/// SGD settings for the bottleneck layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub likelihood: Likelihood,
    /// Keep a copy of `W` after every epoch.
    #[serde(default)]
    pub keep_snapshots: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 100,
            batch_size: 256,
            seed: 0,
            likelihood: Likelihood::Softmax,
            keep_snapshots: false,
        }
    }
}

impl TrainerConfig {
    fn validate(&self) -> Result<(), ScoreError> {
        if self.epochs < 1 {
            return Err(ScoreError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ScoreError::InvalidConfig("batch size must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ScoreError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Linear layer weights, `classes × features`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    classes: usize,
    features: usize,
    data: Vec<f64>,
}

impl Weights {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Weights {
            classes,
            features,
            data: vec![0.0; classes * features],
        }
    }

    pub fn from_vec(classes: usize, features: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), classes * features, "weight shape");
        Weights {
            classes,
            features,
            data,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, class: usize, feature: usize) -> f64 {
        self.data[class * self.features + feature]
    }

    fn row(&self, class: usize) -> &[f64] {
        &self.data[class * self.features..(class + 1) * self.features]
    }

    /// `W · x`.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| self.row(c).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// In-place numerically stable softmax.
pub fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy `-log softmax(W x_i)_{y_i}` over `batch`.
pub fn cross_entropy(
    features: &SimilarityMatrix,
    targets: &[u32],
    w: &Weights,
    batch: &[usize],
) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|&i| {
            let z = w.logits(features.row(i));
            log_sum_exp(&z) - z[targets[i] as usize]
        })
        .sum();
    total / batch.len() as f64
}

/// Mean cross-entropy over `batch` and its analytic gradient with respect to
/// `W`: `(softmax(W x) - onehot(y)) x^T`, averaged.
pub fn cross_entropy_grad(
    features: &SimilarityMatrix,
    targets: &[u32],
    w: &Weights,
    batch: &[usize],
) -> (f64, Weights) {
    let mut grad = Weights::zeros(w.classes, w.features);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = features.row(i);
        let y = targets[i] as usize;
        let mut p = w.logits(x);
        loss += log_sum_exp(&p) - p[y];
        softmax(&mut p);
        p[y] -= 1.0;
        for (c, &err) in p.iter().enumerate() {
            let coef = err * scale;
            let g = &mut grad.data[c * w.features..(c + 1) * w.features];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += coef * xj;
            }
        }
    }
    (loss * scale, grad)
}

/// `h_y - max_{y' != y} h_{y'}` for every sample under weights `w`.
pub fn margins(
    features: &SimilarityMatrix,
    targets: &[u32],
    w: &Weights,
    likelihood: Likelihood,
) -> Vec<f64> {
    (0..features.rows())
        .map(|i| {
            let mut h = w.logits(features.row(i));
            if likelihood == Likelihood::Softmax {
                softmax(&mut h);
            }
            margin_of(&h, targets[i] as usize)
        })
        .collect()
}

fn margin_of(h: &[f64], y: usize) -> f64 {
    let other = h
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if other == f64::NEG_INFINITY {
        // single class: nothing to compete with
        h[y]
    } else {
        h[y] - other
    }
}

/// Per-sample margins, one value per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTrajectory {
    samples: usize,
    epochs: usize,
    /// sample-major: `data[i * epochs + t]`
    data: Vec<f64>,
}

impl MarginTrajectory {
    pub fn from_per_sample(per_sample: Vec<Vec<f64>>) -> Result<Self, ScoreError> {
        let epochs = per_sample.first().map_or(0, Vec::len);
        if per_sample.iter().any(|m| m.len() != epochs) {
            return Err(ScoreError::DimensionMismatch(
                "every sample needs the same number of epochs".into(),
            ));
        }
        Ok(MarginTrajectory {
            samples: per_sample.len(),
            epochs,
            data: per_sample.into_iter().flatten().collect(),
        })
    }

    fn from_epoch_major(samples: usize, epoch_rows: &[Vec<f64>]) -> Self {
        let epochs = epoch_rows.len();
        let mut data = vec![0.0; samples * epochs];
        for (t, row) in epoch_rows.iter().enumerate() {
            for (i, &m) in row.iter().enumerate() {
                data[i * epochs + t] = m;
            }
        }
        MarginTrajectory {
            samples,
            epochs,
            data,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.epochs..(i + 1) * self.epochs]
    }
}

/// Area under the margin: the mean margin over all recorded epochs.
pub fn compute_aum(traj: &MarginTrajectory) -> Result<Vec<f64>, ScoreError> {
    if traj.epochs == 0 {
        return Err(ScoreError::EmptyTrajectory);
    }
    Ok((0..traj.samples)
        .map(|i| traj.sample(i).iter().sum::<f64>() / traj.epochs as f64)
        .collect())
}

/// Trained layer together with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckLayer {
    pub weights: Weights,
    pub config: TrainerConfig,
}

impl BottleneckLayer {
    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.weights.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub layer: BottleneckLayer,
    pub trajectory: MarginTrajectory,
    /// Full-data mean cross-entropy before training and after each epoch.
    pub losses: Vec<f64>,
    /// `W` after each epoch when `keep_snapshots` is set.
    pub snapshots: Vec<Weights>,
}

/// Fits `W` (zero-initialised) with momentum SGD and coupled weight decay,
/// recording every sample's margin in a full pass at the end of each epoch.
pub fn train_bottleneck(
    features: &SimilarityMatrix,
    labels: &LabelVector,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome, ScoreError> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(ScoreError::EmptyDataset);
    }
    if labels.len() != n {
        return Err(ScoreError::DimensionMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let classes = labels.num_classes() as usize;
    if classes == 0 {
        return Err(ScoreError::DimensionMismatch("zero classes".into()));
    }
    let targets = labels.labels();
    let all: Vec<usize> = (0..n).collect();

    let mut w = Weights::zeros(classes, features.cols());
    let mut velocity = Weights::zeros(classes, features.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = all.clone();

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    losses.push(cross_entropy(features, targets, &w, &all));
    let mut epoch_margins = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = cross_entropy_grad(features, targets, &w, batch);
            if !loss.is_finite() {
                return Err(ScoreError::NonFiniteLoss { epoch });
            }
            for ((wv, vv), gv) in w
                .data
                .iter_mut()
                .zip(velocity.data.iter_mut())
                .zip(&grad.data)
            {
                let g = gv + cfg.weight_decay * *wv;
                *vv = cfg.momentum * *vv + g;
                *wv -= cfg.lr * *vv;
            }
        }
        let loss = cross_entropy(features, targets, &w, &all);
        if !loss.is_finite() || w.data.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        epoch_margins.push(margins(features, targets, &w, cfg.likelihood));
        if cfg.keep_snapshots {
            snapshots.push(w.clone());
        }
    }

    Ok(TrainOutcome {
        layer: BottleneckLayer {
            weights: w,
            config: cfg.clone(),
        },
        trajectory: MarginTrajectory::from_epoch_major(n, &epoch_margins),
        losses,
        snapshots,
    })
}

/// Labels for supervised scoring, or class-prompt embeddings for the
/// label-free mode.
#[derive(Debug, Clone)]
pub enum Supervision {
    Labels(LabelVector),
    Prompts(EmbeddingMatrix),
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub table: ScoreTable,
    pub train: TrainOutcome,
    /// Pseudo-labels, in label-free mode.
    pub pseudo_labels: Option<LabelVector>,
}

/// Scores every sample: similarity to the bottleneck concepts, bottleneck
/// training, then AUM against the given (or pseudo) labels.
///
/// In label-free mode each entry's `label` is the pseudo-label as well,
/// since no annotation exists.
pub fn score_dataset(
    visual: &EmbeddingMatrix,
    concepts: &EmbeddingMatrix,
    supervision: &Supervision,
    cfg: &TrainerConfig,
    keep_margins: bool,
) -> Result<ScoreOutcome, ScoreError> {
    let (labels, pseudo) = match supervision {
        Supervision::Labels(l) => (l.clone(), None),
        Supervision::Prompts(p) => {
            let pl = zero_shot_pseudo_labels(visual, p)?;
            (pl.clone(), Some(pl))
        }
    };
    let sim = concept_similarity(visual, concepts)?;
    let train = train_bottleneck(&sim, &labels, cfg)?;
    let aum = compute_aum(&train.trajectory)?;
    let entries = aum
        .iter()
        .enumerate()
        .map(|(i, &a)| ScoreEntry {
            index: i,
            label: labels.labels()[i],
            pseudo_label: pseudo.as_ref().map(|p| p.labels()[i]),
            aum: a,
            margins: keep_margins.then(|| train.trajectory.sample(i).to_vec()),
        })
        .collect();
    Ok(ScoreOutcome {
        table: ScoreTable::new(entries)?,
        train,
        pseudo_labels: pseudo,
    })
}
