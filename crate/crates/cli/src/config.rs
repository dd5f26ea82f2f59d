//! Config file sections and flag resolution.
//!
//! ```toml
//! [pipeline]
//! mode = "labeled"
//! seed = 0
//!
//! [bottleneck]
//! catalog = "data/catalog.json"
//! concept_names = "data/concept_names.json"
//! concept_embeddings = "data/concepts.cbe"
//! k = 5
//!
//! [score]
//! visual = "data/visual.cbe"
//! labels = "data/labels.cbl"
//! epochs = 100
//!
//! [select]
//! alpha = 0.9
//! dataset_tag = "cifar10"
//! ```
//!
//! Flags win over the file; the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use concept_coreset::bench::{BenchConfig, SyntheticSpec};
use concept_coreset::bottleneck::DEFAULT_K;
use concept_coreset::sampler::{lookup_cutoff, Mode, SelectionSpec, DEFAULT_BINS};
use concept_coreset::scorer::{Likelihood, TrainerConfig};
use serde::Deserialize;

use crate::args::{
    BenchCmd, BottleneckInputs, BottleneckOpts, ScoreInputArgs, SelectOpts, SyntheticArgs,
    TrainOpts,
};
use crate::error::CliError;
use crate::stages::{
    BottleneckParams, Method, ScoreInputs, ScoreSettings, SelectSettings,
};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub bottleneck: BottleneckSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckSection {
    pub out: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub concept_names: Option<PathBuf>,
    pub concept_embeddings: Option<PathBuf>,
    pub k: Option<usize>,
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub out: Option<PathBuf>,
    pub visual: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub bottleneck_embeddings: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub likelihood: Option<Likelihood>,
    pub margins: Option<bool>,
    pub normalize_visual: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    pub out: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub visual: Option<PathBuf>,
    pub method: Option<Method>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub dataset_tag: Option<String>,
    pub mode: Option<Mode>,
    pub bins: Option<usize>,
    pub seed: Option<u64>,
    pub topup: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub bins: Option<usize>,
    pub k: Option<usize>,
    pub epochs: Option<usize>,
    pub likelihood: Option<Likelihood>,
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub mislabel_rate: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    let path = value.ok_or_else(|| CliError::Config(format!("missing --{flag}")))?;
    if !path.is_file() {
        return Err(CliError::Io(format!(
            "--{flag}: {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn existing(value: Option<PathBuf>, flag: &str) -> Result<Option<PathBuf>, CliError> {
    value.map(|p| required(Some(p), flag)).transpose()
}

pub fn resolve_bottleneck(
    inputs: &BottleneckInputs,
    opts: &BottleneckOpts,
    file: &BottleneckSection,
) -> Result<BottleneckParams, CliError> {
    let k = opts.k.or(file.k).unwrap_or(DEFAULT_K);
    if k < 1 {
        return Err(CliError::Config("--k must be at least 1".into()));
    }
    Ok(BottleneckParams {
        catalog: required(inputs.catalog.clone().or(file.catalog.clone()), "catalog")?,
        concept_names: required(
            inputs.concept_names.clone().or(file.concept_names.clone()),
            "concept-names",
        )?,
        concept_embeddings: required(
            inputs.concept_embeddings.clone().or(file.concept_embeddings.clone()),
            "concept-embeddings",
        )?,
        k,
        normalize: !opts.no_normalize && file.normalize.unwrap_or(true),
    })
}

pub fn resolve_score_inputs(
    args: &ScoreInputArgs,
    file: &ScoreSection,
    mode: Mode,
) -> Result<ScoreInputs, CliError> {
    let inputs = ScoreInputs {
        visual: required(args.visual.clone().or(file.visual.clone()), "visual")?,
        labels: existing(args.labels.clone().or(file.labels.clone()), "labels")?,
        prompts: existing(args.prompts.clone().or(file.prompts.clone()), "prompts")?,
    };
    inputs.check_mode(mode)?;
    Ok(inputs)
}

pub fn resolve_score_settings(
    opts: &TrainOpts,
    file: &ScoreSection,
    mode: Mode,
    seed: Option<u64>,
) -> Result<ScoreSettings, CliError> {
    let d = TrainerConfig::default();
    let trainer = TrainerConfig {
        lr: opts.lr.or(file.lr).unwrap_or(d.lr),
        momentum: opts.momentum.or(file.momentum).unwrap_or(d.momentum),
        weight_decay: opts.weight_decay.or(file.weight_decay).unwrap_or(d.weight_decay),
        epochs: opts.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: opts.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        seed: seed.or(file.seed).unwrap_or(d.seed),
        likelihood: opts.likelihood.or(file.likelihood).unwrap_or(d.likelihood),
        keep_snapshots: false,
    };
    if trainer.epochs < 1 {
        return Err(CliError::Config("--epochs must be at least 1".into()));
    }
    if trainer.batch_size < 1 {
        return Err(CliError::Config("--batch-size must be at least 1".into()));
    }
    for (flag, v) in [
        ("lr", trainer.lr),
        ("momentum", trainer.momentum),
        ("weight-decay", trainer.weight_decay),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(CliError::Config(format!("--{flag} must be non-negative")));
        }
    }
    Ok(ScoreSettings {
        mode,
        trainer,
        normalize_visual: !opts.no_normalize_visual && file.normalize_visual.unwrap_or(true),
        margins: opts.margins || file.margins.unwrap_or(false),
    })
}

pub fn resolve_select_settings(
    opts: &SelectOpts,
    file: &SelectSection,
    mode: Mode,
    seed: Option<u64>,
) -> Result<SelectSettings, CliError> {
    let alpha = opts
        .alpha
        .or(file.alpha)
        .ok_or_else(|| CliError::Config("missing --alpha".into()))?;
    let dataset_tag = opts.dataset_tag.clone().or(file.dataset_tag.clone());
    let method = opts.method.or(file.method).unwrap_or_default();
    let beta = match (opts.beta.or(file.beta), &dataset_tag, method) {
        (Some(b), _, _) => b,
        (None, _, Method::Random) => 0.0,
        (None, Some(tag), Method::Ccs) => lookup_cutoff(tag, alpha, mode)?,
        (None, None, Method::Ccs) => {
            return Err(CliError::Config(
                "ccs needs --beta or a --dataset-tag with a built-in cutoff rate".into(),
            ))
        }
    };
    let spec = SelectionSpec {
        alpha,
        beta,
        bins: opts.bins.or(file.bins).unwrap_or(DEFAULT_BINS),
        seed: seed.or(file.seed).unwrap_or(0),
        topup: !opts.no_topup && file.topup.unwrap_or(true),
    };
    spec.validate()?;
    Ok(SelectSettings {
        method,
        spec,
        dataset_tag,
        mode,
    })
}

pub fn resolve_synthetic(args: &SyntheticArgs, file: &BenchSection, seed: Option<u64>) -> SyntheticSpec {
    let d = SyntheticSpec::default();
    SyntheticSpec {
        classes: args.classes.or(file.classes).unwrap_or(d.classes),
        per_class: args.per_class.or(file.per_class).unwrap_or(d.per_class),
        dim: args.dim.or(file.dim).unwrap_or(d.dim),
        noise_sigma: args.noise_sigma.or(file.noise_sigma).unwrap_or(d.noise_sigma),
        mislabel_rate: args.mislabel_rate.or(file.mislabel_rate).unwrap_or(d.mislabel_rate),
        seed: seed.unwrap_or(d.seed),
        ..d
    }
}

pub fn resolve_bench(cmd: &BenchCmd, file: &BenchSection) -> Result<BenchConfig, CliError> {
    let d = BenchConfig::default();
    let alphas = cmd.alpha.clone().or(file.alpha.clone());
    let betas = cmd.beta.clone().or(file.beta.clone());
    let rates = match (alphas, betas) {
        (None, None) => d.rates.clone(),
        (Some(a), Some(b)) if a.len() == b.len() => a.into_iter().zip(b).collect(),
        (Some(_), Some(_)) => {
            return Err(CliError::Config("--alpha and --beta need the same length".into()))
        }
        (Some(a), None) => a
            .into_iter()
            .map(|alpha| lookup_cutoff("cifar10", alpha, Mode::Labeled).map(|b| (alpha, b)))
            .collect::<Result<_, _>>()?,
        (None, Some(_)) => return Err(CliError::Config("--beta needs --alpha".into())),
    };
    for &(alpha, beta) in &rates {
        SelectionSpec {
            alpha,
            beta,
            ..Default::default()
        }
        .validate()?;
    }
    let mut scorer = d.scorer.clone();
    if let Some(e) = cmd.epochs.or(file.epochs) {
        if e < 1 {
            return Err(CliError::Config("--epochs must be at least 1".into()));
        }
        scorer.epochs = e;
    }
    if let Some(l) = cmd.likelihood.or(file.likelihood) {
        scorer.likelihood = l;
    }
    let seeds = cmd.seeds.clone().or(file.seeds.clone()).unwrap_or(d.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Config("--seeds must not be empty".into()));
    }
    Ok(BenchConfig {
        data: resolve_synthetic(&cmd.data, file, None),
        seeds,
        rates,
        bins: cmd.bins.or(file.bins).unwrap_or(d.bins),
        k: cmd.k.or(file.k).unwrap_or(d.k),
        scorer,
        ..d
    })
}
