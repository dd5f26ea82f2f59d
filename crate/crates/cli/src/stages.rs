//! Pipeline stages over fully resolved parameters. Each stage writes its
//! artifacts and a manifest into one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use concept_coreset::bench::{self, BenchConfig, SyntheticSpec};
use concept_coreset::bottleneck::{assemble_bottleneck, select_discriminative, ConceptCatalog, ConceptEmbeddings};
use concept_coreset::sampler::{ccs_select, random_select, Mode, SelectionSpec};
use concept_coreset::scorer::{score_dataset, zero_shot_pseudo_labels, Supervision, TrainerConfig};
use concept_coreset::tensor_io::{
    self, read_embeddings, read_labels, write_coreset, write_embeddings, write_labels, write_margins,
    write_scores, EmbeddingMatrix,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::Manifest;

pub const SELECTION_FILE: &str = "bottleneck.json";
pub const CONCEPTS_FILE: &str = "bottleneck.cbe";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const MARGINS_FILE: &str = "margins.jsonl";
pub const CORESET_FILE: &str = "coreset.txt";
pub const PSEUDO_LABELS_FILE: &str = "pseudo_labels.cbl";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckParams {
    pub catalog: PathBuf,
    pub concept_names: PathBuf,
    pub concept_embeddings: PathBuf,
    pub k: usize,
    pub normalize: bool,
}

pub fn run_bottleneck(p: &BottleneckParams, out: &Path) -> Result<Manifest, CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("bottleneck", p)?;
    manifest.input("catalog", &p.catalog)?;
    manifest.input("concept_names", &p.concept_names)?;
    manifest.input("concept_embeddings", &p.concept_embeddings)?;

    let catalog = ConceptCatalog::read(&p.catalog)?;
    let embeddings = ConceptEmbeddings::read(&p.concept_names, &p.concept_embeddings)?;
    let selection = select_discriminative(&catalog, p.k)?;
    let bottleneck = assemble_bottleneck(selection, &embeddings, p.normalize)?;
    log::info!(
        "bottleneck: {} classes, {} concepts",
        bottleneck.num_classes(),
        bottleneck.num_concepts()
    );

    write_text(&out.join(SELECTION_FILE), &(bottleneck.selection.to_json() + "\n"))?;
    write_embeddings(out.join(CONCEPTS_FILE), &bottleneck.embeddings)?;
    manifest.output(out, SELECTION_FILE)?;
    manifest.output(out, CONCEPTS_FILE)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Visual embeddings and the labels (or class prompts) to score against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInputs {
    pub visual: PathBuf,
    pub labels: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub mode: Mode,
    pub trainer: TrainerConfig,
    pub normalize_visual: bool,
    pub margins: bool,
}

impl ScoreInputs {
    /// Label-free scoring takes prompts and no labels; labeled scoring the
    /// reverse.
    pub fn check_mode(&self, mode: Mode) -> Result<(), CliError> {
        match (mode, &self.labels, &self.prompts) {
            (Mode::Labeled, Some(_), None) | (Mode::LabelFree, None, Some(_)) => Ok(()),
            (Mode::Labeled, None, _) => Err(CliError::Config("labeled mode requires --labels".into())),
            (Mode::Labeled, Some(_), Some(_)) => Err(CliError::Config(
                "labeled mode does not take --prompts".into(),
            )),
            (Mode::LabelFree, Some(_), _) => Err(CliError::Config(
                "label-free mode forbids --labels".into(),
            )),
            (Mode::LabelFree, None, None) => Err(CliError::Config(
                "label-free mode requires --prompts".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub inputs: ScoreInputs,
    pub bottleneck_embeddings: PathBuf,
    pub settings: ScoreSettings,
}

fn load_visual(path: &Path, normalize: bool) -> Result<EmbeddingMatrix, CliError> {
    let visual = read_embeddings(path)?;
    if normalize && !visual.is_normalized() {
        Ok(visual.normalized_rows()?)
    } else {
        Ok(visual)
    }
}

pub fn run_score(p: &ScoreParams, out: &Path) -> Result<Manifest, CliError> {
    p.inputs.check_mode(p.settings.mode)?;
    create_dir(out)?;
    let mut manifest = Manifest::new("score", p)?;
    manifest.input("visual", &p.inputs.visual)?;
    manifest.input("bottleneck_embeddings", &p.bottleneck_embeddings)?;

    let visual = load_visual(&p.inputs.visual, p.settings.normalize_visual)?;
    let concepts = read_embeddings(&p.bottleneck_embeddings)?;
    let supervision = match (&p.inputs.labels, &p.inputs.prompts) {
        (Some(l), _) => {
            manifest.input("labels", l)?;
            Supervision::Labels(read_labels(l)?)
        }
        (None, Some(pr)) => {
            manifest.input("prompts", pr)?;
            Supervision::Prompts(read_embeddings(pr)?)
        }
        (None, None) => unreachable!("checked by check_mode"),
    };
    let scored = score_dataset(
        &visual,
        &concepts,
        &supervision,
        &p.settings.trainer,
        p.settings.margins,
    )?;
    log::info!(
        "scored {} samples over {} epochs",
        scored.table.len(),
        p.settings.trainer.epochs
    );

    write_scores(out.join(SCORES_FILE), &scored.table)?;
    manifest.output(out, SCORES_FILE)?;
    if p.settings.margins && write_margins(out.join(MARGINS_FILE), &scored.table)? {
        manifest.output(out, MARGINS_FILE)?;
    }
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ccs,
    Random,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ccs" => Ok(Method::Ccs),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown method {other:?} (ccs|random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectSettings {
    pub method: Method,
    /// Cutoff rate, already resolved from the built-in table if needed.
    pub spec: SelectionSpec,
    pub dataset_tag: Option<String>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    pub scores: PathBuf,
    /// Hashed into the coreset header when given.
    pub visual: Option<PathBuf>,
    pub settings: SelectSettings,
}

pub fn run_select(p: &SelectParams, out: &Path) -> Result<Manifest, CliError> {
    p.settings.spec.validate()?;
    create_dir(out)?;
    let mut manifest = Manifest::new("select", p)?;
    let score_hash = manifest.input("scores", &p.scores)?;
    let dataset_hash = p
        .visual
        .as_ref()
        .map(|v| manifest.input("visual", v))
        .transpose()?;

    let table = tensor_io::read_scores(&p.scores, None)?;
    let spec = &p.settings.spec;
    let mut coreset = match p.settings.method {
        Method::Ccs => ccs_select(&table, spec)?.coreset,
        Method::Random => {
            let mut c = random_select(table.len(), spec.budget(table.len()), spec.seed)?;
            c.meta.alpha = Some(spec.alpha);
            c
        }
    };
    coreset.meta.score_hash = Some(score_hash);
    coreset.meta.dataset_hash = dataset_hash;
    log::info!("selected {} of {} samples", coreset.len(), table.len());

    write_coreset(out.join(CORESET_FILE), &coreset)?;
    manifest.output(out, CORESET_FILE)?;
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelParams {
    pub visual: PathBuf,
    pub prompts: PathBuf,
}

pub fn run_pseudo_label(p: &PseudoLabelParams, out: &Path) -> Result<Manifest, CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("pseudo-label", p)?;
    manifest.input("visual", &p.visual)?;
    manifest.input("prompts", &p.prompts)?;
    let labels = zero_shot_pseudo_labels(&read_embeddings(&p.visual)?, &read_embeddings(&p.prompts)?)?;
    write_labels(out.join(PSEUDO_LABELS_FILE), &labels)?;
    manifest.output(out, PSEUDO_LABELS_FILE)?;
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub bottleneck: BottleneckParams,
    pub score_inputs: ScoreInputs,
    pub score: ScoreSettings,
    pub select: SelectSettings,
}

/// Bottleneck, score and select in sequence, each in its own subdirectory.
pub fn run_pipeline(p: &PipelineParams, out: &Path) -> Result<Manifest, CliError> {
    p.score_inputs.check_mode(p.score.mode)?;
    p.select.spec.validate()?;
    create_dir(out)?;
    let mut manifest = Manifest::new("pipeline", p)?;

    let b_dir = out.join("bottleneck");
    let b = run_bottleneck(&p.bottleneck, &b_dir)?;
    let s_dir = out.join("score");
    let s = run_score(
        &ScoreParams {
            inputs: p.score_inputs.clone(),
            bottleneck_embeddings: b_dir.join(CONCEPTS_FILE),
            settings: p.score.clone(),
        },
        &s_dir,
    )?;
    let c_dir = out.join("select");
    let c = run_select(
        &SelectParams {
            scores: s_dir.join(SCORES_FILE),
            visual: Some(p.score_inputs.visual.clone()),
            settings: p.select.clone(),
        },
        &c_dir,
    )?;

    for (stage, m) in [("bottleneck", &b), ("score", &s), ("select", &c)] {
        for (name, sha) in &m.outputs {
            manifest.outputs.insert(format!("{stage}/{name}"), sha.clone());
        }
        for (role, d) in &m.inputs {
            if !d.path.starts_with(out) {
                manifest.inputs.insert(role.clone(), d.clone());
            }
        }
    }
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub config: BenchConfig,
}

pub fn run_bench(p: &BenchParams, out: &Path) -> Result<Manifest, CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("bench", p)?;
    let report = bench::run_experiment(&p.config)?;
    write_text(&out.join("results.csv"), &report.to_csv())?;
    write_text(
        &out.join("results.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    write_text(&out.join("summary.md"), &report.to_markdown())?;
    for name in ["results.csv", "results.json", "summary.md"] {
        manifest.output(out, name)?;
    }
    manifest.write(out)?;
    print!("{}", report.to_markdown());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub spec: SyntheticSpec,
}

/// File names written by [`run_synth`].
pub mod synth_files {
    pub const VISUAL: &str = "visual.cbe";
    pub const LABELS: &str = "labels.cbl";
    pub const TRUE_LABELS: &str = "true_labels.cbl";
    pub const FLIPS: &str = "flips.json";
    pub const CATALOG: &str = "catalog.json";
    pub const CONCEPT_NAMES: &str = "concept_names.json";
    pub const CONCEPT_EMBEDDINGS: &str = "concepts.cbe";
    pub const PROMPTS: &str = "prompts.cbe";
}

/// Writes a synthetic dataset in the same formats an encoder run produces.
pub fn run_synth(p: &SynthParams, out: &Path) -> Result<Manifest, CliError> {
    use synth_files::*;
    create_dir(out)?;
    let mut manifest = Manifest::new("synth", p)?;
    let data = bench::generate_synthetic(&p.spec)?;
    write_embeddings(out.join(VISUAL), &data.visual)?;
    write_labels(out.join(LABELS), &data.labels)?;
    write_labels(out.join(TRUE_LABELS), &data.true_labels)?;
    write_text(&out.join(FLIPS), &(serde_json::to_string(&data.flips)? + "\n"))?;
    write_text(&out.join(CATALOG), &(data.catalog.to_json() + "\n"))?;
    data.concept_embeddings
        .write(out.join(CONCEPT_NAMES), out.join(CONCEPT_EMBEDDINGS))?;
    write_embeddings(out.join(PROMPTS), &data.prompts)?;
    for name in [VISUAL, LABELS, TRUE_LABELS, FLIPS, CATALOG, CONCEPT_NAMES, CONCEPT_EMBEDDINGS, PROMPTS] {
        manifest.output(out, name)?;
    }
    manifest.write(out)?;
    Ok(manifest)
}

/// Re-runs the stage recorded in a manifest into `out`.
pub fn replay(manifest: &Manifest, out: &Path) -> Result<Manifest, CliError> {
    fn params<T: serde::de::DeserializeOwned>(m: &Manifest) -> Result<T, CliError> {
        serde_json::from_value(m.params.clone())
            .map_err(|e| CliError::Config(format!("manifest params: {e}")))
    }
    let changed = manifest.changed_inputs()?;
    if !changed.is_empty() {
        log::warn!("inputs changed since the manifest was written: {}", changed.join(", "));
    }
    match manifest.stage.as_str() {
        "bottleneck" => run_bottleneck(&params(manifest)?, out),
        "score" => run_score(&params(manifest)?, out),
        "select" => run_select(&params(manifest)?, out),
        "pseudo-label" => run_pseudo_label(&params(manifest)?, out),
        "pipeline" => run_pipeline(&params(manifest)?, out),
        "bench" => run_bench(&params(manifest)?, out),
        "synth" => run_synth(&params(manifest)?, out),
        other => Err(CliError::Config(format!("unknown stage {other:?} in manifest"))),
    }
}
