//! Desk-scale experiments on synthetic embeddings.
//!
//! [`generate_synthetic`] stands in for an encoder run over a real dataset:
//! class centers on the unit sphere, noisy unit-norm visual rows around
//! them, concept and prompt embeddings jittered around the same centers,
//! and a recorded fraction of flipped labels. [`run_experiment`] scores the
//! training split, selects coresets by concept AUM with coverage-centric
//! sampling and uniformly at random, and compares linear probes trained on
//! each against a held-out split.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bottleneck::{
    assemble_bottleneck, select_discriminative, BottleneckError, ConceptCatalog, ConceptEmbeddings,
};
use crate::sampler::{ccs_select_budget, random_select, SelectError, SelectionSpec};
use crate::scorer::{
    score_dataset, train_bottleneck, ScoreError, SimilarityMatrix, Supervision, TrainerConfig,
};
use crate::tensor_io::{Coreset, EmbeddingMatrix, FormatError, LabelVector, ScoreTable};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("coreset is empty")]
    EmptyCoreset,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Bottleneck(#[from] BottleneckError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Parameters of a synthetic embedding dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Length of the class-center vector before noise is added.
    pub separation: f64,
    /// Per-coordinate standard deviation of the visual noise.
    pub noise_sigma: f64,
    /// Fraction of samples whose label is flipped to a wrong class.
    pub mislabel_rate: f64,
    /// Discriminative attributes generated per class (the catalog also
    /// carries attributes shared by every class).
    pub concepts_per_class: usize,
    /// Attributes listed under every class, which selection must drop.
    pub shared_concepts: usize,
    /// Per-coordinate standard deviation of concept/prompt jitter.
    pub concept_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            per_class: 200,
            dim: 64,
            separation: 1.0,
            noise_sigma: 0.3,
            mislabel_rate: 0.1,
            concepts_per_class: 6,
            shared_concepts: 2,
            concept_jitter: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), BenchError> {
        if self.classes < 1 || self.per_class < 1 || self.dim < 1 || self.concepts_per_class < 1 {
            return Err(BenchError::InvalidSpec("all counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.mislabel_rate) {
            return Err(BenchError::InvalidSpec(format!(
                "mislabel rate must lie in [0, 1), got {}",
                self.mislabel_rate
            )));
        }
        if self.mislabel_rate > 0.0 && self.classes < 2 {
            return Err(BenchError::InvalidSpec("flipping labels needs two classes".into()));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise_sigma", self.noise_sigma),
            ("concept_jitter", self.concept_jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(BenchError::InvalidSpec(format!("{name} must be non-negative")));
            }
        }
        if self.separation == 0.0 && self.noise_sigma == 0.0 {
            return Err(BenchError::InvalidSpec(
                "separation and noise cannot both be zero".into(),
            ));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.classes * self.per_class
    }
}

/// A generated dataset with everything the pipeline needs as input.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub visual: EmbeddingMatrix,
    /// Observed labels, including flips.
    pub labels: LabelVector,
    pub true_labels: LabelVector,
    /// Indices whose observed label differs from the true one, ascending.
    pub flips: Vec<usize>,
    pub catalog: ConceptCatalog,
    pub concept_embeddings: ConceptEmbeddings,
    /// One "a photo of a {class}" embedding per class.
    pub prompts: EmbeddingMatrix,
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn jittered(rng: &mut ChaCha8Rng, center: &[f64], scale: f64, sigma: f64) -> Vec<f32> {
    let noise = gaussian(rng, center.len(), sigma);
    let v: Vec<f64> = center.iter().zip(&noise).map(|(c, z)| scale * c + z).collect();
    unit_f32(&v)
}

/// Draws a dataset; the same spec always yields the same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let g = gaussian(&mut rng, spec.dim, 1.0);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let n = spec.samples();
    let mut rows = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            rows.push(jittered(&mut rng, center, spec.separation, spec.noise_sigma));
            truth.push(c as u32);
        }
    }
    let visual = EmbeddingMatrix::from_rows(&rows, true)?;

    let flip_count = (n as f64 * spec.mislabel_rate).floor() as usize;
    let mut flips = index::sample(&mut rng, n, flip_count).into_vec();
    flips.sort_unstable();
    let mut observed = truth.clone();
    for &i in &flips {
        let offset = rng.random_range(1..spec.classes as u32);
        observed[i] = (truth[i] + offset) % spec.classes as u32;
    }

    // catalog: shared attributes interleaved ahead of the class-specific ones
    let mut names: Vec<String> = Vec::new();
    let mut vectors: Vec<Vec<f32>> = Vec::new();
    let shared: Vec<String> = (0..spec.shared_concepts)
        .map(|s| format!("shared attribute {s}"))
        .collect();
    for s in &shared {
        names.push(s.clone());
        vectors.push(unit_f32(&gaussian(&mut rng, spec.dim, 1.0)));
    }
    let mut entries = Vec::with_capacity(spec.classes);
    let mut prompts = Vec::with_capacity(spec.classes);
    for (c, center) in centers.iter().enumerate() {
        let name = class_name(c);
        names.push(name.clone());
        vectors.push(jittered(&mut rng, center, 1.0, spec.concept_jitter));
        prompts.push(jittered(&mut rng, center, 1.0, spec.concept_jitter));
        let mut list = Vec::new();
        for a in 0..spec.concepts_per_class {
            if let Some(s) = shared.get(a) {
                list.push(s.clone());
            }
            let attr = format!("{name} attribute {a}");
            names.push(attr.clone());
            vectors.push(jittered(&mut rng, center, 1.0, spec.concept_jitter));
            list.push(attr);
        }
        list.extend(shared.iter().skip(spec.concepts_per_class).cloned());
        entries.push((name, list));
    }

    Ok(SyntheticDataset {
        visual,
        labels: LabelVector::new(observed, spec.classes as u32)?,
        true_labels: LabelVector::new(truth, spec.classes as u32)?,
        flips,
        catalog: ConceptCatalog::new(entries)?,
        concept_embeddings: ConceptEmbeddings::new(
            names,
            EmbeddingMatrix::from_rows(&vectors, true)?,
        )?,
        prompts: EmbeddingMatrix::from_rows(&prompts, true)?,
    })
}

/// Stratified train/held-out split: `round(fraction · count)` of each true
/// class goes to the held-out side. Both lists are ascending.
pub fn split_holdout(true_labels: &LabelVector, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..true_labels.num_classes() {
        let mut members: Vec<usize> = (0..true_labels.len())
            .filter(|&i| true_labels.labels()[i] == c)
            .collect();
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * fraction).round() as usize;
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Held-out rows and their true labels.
#[derive(Debug, Clone)]
pub struct Holdout {
    pub visual: EmbeddingMatrix,
    pub labels: LabelVector,
}

/// Optimiser settings for the downstream linear probe.
pub fn default_probe_config(seed: u64) -> TrainerConfig {
    TrainerConfig {
        lr: 0.1,
        momentum: 0.9,
        weight_decay: 5e-4,
        epochs: 100,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

/// Trains a linear probe on the coreset rows (with their observed labels)
/// and returns its accuracy on the held-out split.
pub fn evaluate_coreset(
    visual: &EmbeddingMatrix,
    labels: &LabelVector,
    coreset: &Coreset,
    holdout: &Holdout,
    cfg: &TrainerConfig,
) -> Result<f64, BenchError> {
    if coreset.is_empty() {
        return Err(BenchError::EmptyCoreset);
    }
    let features = SimilarityMatrix::from_embeddings(&visual.select_rows(coreset.indices()));
    let sub_labels = labels.select(coreset.indices());
    let out = train_bottleneck(&features, &sub_labels, cfg)?;
    let test = SimilarityMatrix::from_embeddings(&holdout.visual);
    if holdout.labels.is_empty() {
        return Ok(0.0);
    }
    let correct = (0..test.rows())
        .filter(|&i| out.layer.predict(test.row(i)) == holdout.labels.get(i))
        .count();
    Ok(correct as f64 / test.rows() as f64)
}

fn hardest(table: &ScoreTable, count: usize) -> Vec<usize> {
    let scores = table.scores_by_index();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Fraction of flipped samples among the `floor(n·beta)` lowest-AUM ones.
/// With no flips there is nothing to miss and the rate is 1.
pub fn mislabeled_capture_rate(table: &ScoreTable, flips: &[usize], beta: f64) -> f64 {
    if flips.is_empty() {
        return 1.0;
    }
    let n = table.len();
    let count = ((n as f64 * beta + 1e-9).floor() as usize).min(n);
    let mut in_cut = vec![false; n];
    for i in hardest(table, count) {
        in_cut[i] = true;
    }
    flips.iter().filter(|&&i| in_cut[i]).count() as f64 / flips.len() as f64
}

/// Probability that a random clean sample out-scores a random flipped one
/// (ties count half).
pub fn separation_auc(table: &ScoreTable, flips: &[usize]) -> f64 {
    let scores = table.scores_by_index();
    let mut flipped = vec![false; scores.len()];
    for &i in flips {
        flipped[i] = true;
    }
    let bad: Vec<f64> = flips.iter().map(|&i| scores[i]).collect();
    let good: Vec<f64> = (0..scores.len()).filter(|&i| !flipped[i]).map(|i| scores[i]).collect();
    if bad.is_empty() || good.is_empty() {
        return 1.0;
    }
    let mut wins = 0.0;
    for g in &good {
        for b in &bad {
            wins += match g.total_cmp(b) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    wins / (good.len() * bad.len()) as f64
}

/// Grid of a desk-scale comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub data: SyntheticSpec,
    pub seeds: Vec<u64>,
    /// (alpha, beta) pairs.
    pub rates: Vec<(f64, f64)>,
    pub bins: usize,
    pub k: usize,
    pub holdout_fraction: f64,
    /// Cutoff at which the mislabeled capture rate is reported.
    pub capture_beta: f64,
    pub scorer: TrainerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            data: SyntheticSpec::default(),
            seeds: vec![0, 1, 2],
            rates: vec![(0.9, 0.3)],
            bins: crate::sampler::DEFAULT_BINS,
            k: crate::bottleneck::DEFAULT_K,
            holdout_fraction: 0.2,
            capture_beta: 0.3,
            scorer: TrainerConfig::default(),
        }
    }
}

/// One (method, rate, seed) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub coreset_size: usize,
    pub accuracy: f64,
}

/// Per-seed scoring diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRow {
    pub seed: u64,
    pub capture_rate: f64,
    pub separation_auc: f64,
    pub full_data_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub scoring: Vec<ScoringRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

impl BenchReport {
    pub fn accuracies(&self, method: &str, alpha: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && (r.alpha - alpha).abs() < 1e-12)
            .map(|r| r.accuracy)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,alpha,beta,seed,coreset_size,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.alpha, r.beta, r.seed, r.coreset_size, r.accuracy
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "Synthetic data: {} classes x {} samples, d = {}, mislabel rate {}, seeds {:?}\n\n",
            self.config.data.classes,
            self.config.data.per_class,
            self.config.data.dim,
            self.config.data.mislabel_rate,
            self.config.seeds
        ));
        out.push_str("| alpha | beta | concept AUM + CCS | random | gap |\n");
        out.push_str("|---|---|---|---|---|\n");
        for &(alpha, beta) in &self.config.rates {
            let (cm, cs) = mean_std(&self.accuracies("concept-ccs", alpha));
            let (rm, rs) = mean_std(&self.accuracies("random", alpha));
            out.push_str(&format!(
                "| {alpha} | {beta} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:+.2} |\n",
                100.0 * cm,
                100.0 * cs,
                100.0 * rm,
                100.0 * rs,
                100.0 * (cm - rm)
            ));
        }
        let cap: Vec<f64> = self.scoring.iter().map(|s| s.capture_rate).collect();
        let auc: Vec<f64> = self.scoring.iter().map(|s| s.separation_auc).collect();
        let full: Vec<f64> = self.scoring.iter().map(|s| s.full_data_accuracy).collect();
        let (cm, cs) = mean_std(&cap);
        let (am, as_) = mean_std(&auc);
        let (fm, fs) = mean_std(&full);
        out.push_str(&format!(
            "\nMislabeled capture rate at beta = {}: {:.3} ± {:.3}\n",
            self.config.capture_beta, cm, cs
        ));
        out.push_str(&format!("Clean-vs-flipped AUC: {am:.3} ± {as_:.3}\n"));
        out.push_str(&format!("Full-data probe accuracy: {:.2} ± {:.2}\n", 100.0 * fm, 100.0 * fs));
        out
    }
}

/// Runs the comparison for every seed and rate.
pub fn run_experiment(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let mut rows = Vec::new();
    let mut scoring = Vec::new();
    for &seed in &cfg.seeds {
        let spec = SyntheticSpec {
            seed,
            ..cfg.data.clone()
        };
        let data = generate_synthetic(&spec)?;
        let (train, test) = split_holdout(&data.true_labels, cfg.holdout_fraction, seed);
        let visual = data.visual.select_rows(&train);
        let labels = data.labels.select(&train);
        let holdout = Holdout {
            visual: data.visual.select_rows(&test),
            labels: data.true_labels.select(&test),
        };
        let mut is_flip = vec![false; data.visual.rows()];
        for &i in &data.flips {
            is_flip[i] = true;
        }
        let flips: Vec<usize> = (0..train.len()).filter(|&p| is_flip[train[p]]).collect();

        let selection = select_discriminative(&data.catalog, cfg.k)?;
        let bottleneck = assemble_bottleneck(selection, &data.concept_embeddings, true)?;
        let scorer_cfg = TrainerConfig {
            seed,
            ..cfg.scorer.clone()
        };
        let scored = score_dataset(
            &visual,
            &bottleneck.embeddings,
            &Supervision::Labels(labels.clone()),
            &scorer_cfg,
            false,
        )?;
        let probe = default_probe_config(seed);
        let everything = random_select(train.len(), train.len(), seed)?;
        scoring.push(ScoringRow {
            seed,
            capture_rate: mislabeled_capture_rate(&scored.table, &flips, cfg.capture_beta),
            separation_auc: separation_auc(&scored.table, &flips),
            full_data_accuracy: evaluate_coreset(&visual, &labels, &everything, &holdout, &probe)?,
        });

        for &(alpha, beta) in &cfg.rates {
            let sel = SelectionSpec {
                alpha,
                beta,
                bins: cfg.bins,
                seed,
                topup: true,
            };
            let m = sel.budget(train.len());
            let ccs = ccs_select_budget(&scored.table, &sel, m)?.coreset;
            let rnd = random_select(train.len(), m, seed)?;
            for (method, coreset) in [("concept-ccs", &ccs), ("random", &rnd)] {
                rows.push(BenchRow {
                    method: method.into(),
                    alpha,
                    beta,
                    seed,
                    coreset_size: coreset.len(),
                    accuracy: evaluate_coreset(&visual, &labels, coreset, &holdout, &probe)?,
                });
            }
        }
    }
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
        scoring,
    })
}
