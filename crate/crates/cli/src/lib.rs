//! Command-line front end for concept-based coreset selection.
//!
//! Every stage writes its outputs plus a `<stage>.manifest.json` recording
//! resolved parameters and input/output digests; `replay` re-runs a stage from
//! that manifest and checks the outputs match.

pub mod args;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

use concept_coreset::sampler::Mode;

use crate::args::{Cli, Command};
use crate::config::ConfigFile;
pub use crate::error::CliError;
use crate::manifest::Manifest;
use crate::stages::*;

fn out_dir(flag: &Option<PathBuf>, section: &Option<PathBuf>, pipeline: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| section.clone())
        .or_else(|| pipeline.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn report(manifest: &Manifest, out: &Path) {
    log::info!(
        "{} done: {}",
        manifest.stage,
        out.join(Manifest::file_name(&manifest.stage)).display()
    );
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let pipe = &cfg.pipeline;
    let seed = cli.seed.or(pipe.seed);
    match cli.command {
        Command::Bottleneck(cmd) => {
            let params = config::resolve_bottleneck(&cmd.inputs, &cmd.opts, &cfg.bottleneck)?;
            let out = out_dir(&cli.out, &cfg.bottleneck.out, &pipe.out);
            report(&run_bottleneck(&params, &out)?, &out);
        }
        Command::Score(cmd) => {
            let s = &cfg.score;
            let mode = cmd.opts.mode.or(s.mode).or(pipe.mode).unwrap_or(Mode::Labeled);
            let inputs = config::resolve_score_inputs(&cmd.inputs, s, mode)?;
            let bottleneck_embeddings = cmd
                .bottleneck_embeddings
                .clone()
                .or(s.bottleneck_embeddings.clone())
                .ok_or_else(|| CliError::Config("missing --bottleneck-embeddings".into()))?;
            if !bottleneck_embeddings.is_file() {
                return Err(CliError::Io(format!(
                    "--bottleneck-embeddings: {} does not exist",
                    bottleneck_embeddings.display()
                )));
            }
            let settings = config::resolve_score_settings(&cmd.opts, s, mode, seed)?;
            let out = out_dir(&cli.out, &s.out, &pipe.out);
            let params = ScoreParams {
                inputs,
                bottleneck_embeddings,
                settings,
            };
            report(&run_score(&params, &out)?, &out);
        }
        Command::Select(cmd) => {
            let s = &cfg.select;
            let mode = cmd.mode.or(s.mode).or(pipe.mode).unwrap_or(Mode::Labeled);
            let scores = cmd
                .scores
                .clone()
                .or(s.scores.clone())
                .ok_or_else(|| CliError::Config("missing --scores".into()))?;
            for (flag, p) in [("scores", Some(&scores)), ("visual", cmd.visual.as_ref().or(s.visual.as_ref()))] {
                if let Some(p) = p {
                    if !p.is_file() {
                        return Err(CliError::Io(format!("--{flag}: {} does not exist", p.display())));
                    }
                }
            }
            let settings = config::resolve_select_settings(&cmd.opts, s, mode, seed)?;
            let params = SelectParams {
                scores,
                visual: cmd.visual.clone().or(s.visual.clone()),
                settings,
            };
            let out = out_dir(&cli.out, &s.out, &pipe.out);
            report(&run_select(&params, &out)?, &out);
        }
        Command::Pipeline(cmd) => {
            let mode = cmd
                .train
                .mode
                .or(pipe.mode)
                .or(cfg.score.mode)
                .unwrap_or(Mode::Labeled);
            if let Some(m) = cfg.select.mode {
                if m != mode {
                    return Err(CliError::Config(format!(
                        "[select] mode {m} disagrees with scoring mode {mode}"
                    )));
                }
            }
            let params = PipelineParams {
                bottleneck: config::resolve_bottleneck(
                    &cmd.bottleneck_inputs,
                    &cmd.bottleneck,
                    &cfg.bottleneck,
                )?,
                score_inputs: config::resolve_score_inputs(&cmd.score_inputs, &cfg.score, mode)?,
                score: config::resolve_score_settings(&cmd.train, &cfg.score, mode, seed)?,
                select: config::resolve_select_settings(&cmd.select, &cfg.select, mode, seed)?,
            };
            let out = out_dir(&cli.out, &pipe.out, &None);
            report(&run_pipeline(&params, &out)?, &out);
        }
        Command::Bench(cmd) => {
            let mut config = config::resolve_bench(&cmd, &cfg.bench)?;
            if let Some(s) = seed {
                config.data.seed = s;
            }
            let out = out_dir(&cli.out, &cfg.bench.out, &pipe.out);
            report(&run_bench(&BenchParams { config }, &out)?, &out);
        }
        Command::PseudoLabel(cmd) => {
            let visual = cmd
                .visual
                .clone()
                .or(cfg.score.visual.clone())
                .ok_or_else(|| CliError::Config("missing --visual".into()))?;
            let prompts = cmd
                .prompts
                .clone()
                .or(cfg.score.prompts.clone())
                .ok_or_else(|| CliError::Config("missing --prompts".into()))?;
            for (flag, p) in [("visual", &visual), ("prompts", &prompts)] {
                if !p.is_file() {
                    return Err(CliError::Io(format!("--{flag}: {} does not exist", p.display())));
                }
            }
            let out = out_dir(&cli.out, &cfg.score.out, &pipe.out);
            report(&run_pseudo_label(&PseudoLabelParams { visual, prompts }, &out)?, &out);
        }
        Command::Synth(cmd) => {
            let spec = config::resolve_synthetic(&cmd.data, &cfg.bench, seed);
            let out = out_dir(&cli.out, &None, &pipe.out);
            report(&run_synth(&SynthParams { spec }, &out)?, &out);
        }
        Command::Replay(cmd) => {
            let recorded = Manifest::read(&cmd.manifest)?;
            let out = out_dir(&cli.out, &None, &None);
            let fresh = replay(&recorded, &out)?;
            let mismatched: Vec<&String> = recorded
                .outputs
                .iter()
                .filter(|(name, sha)| fresh.outputs.get(*name) != Some(sha))
                .map(|(name, _)| name)
                .collect();
            if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
                return Err(CliError::Numerical(format!(
                    "replay of {} differs in: {}",
                    recorded.stage,
                    mismatched
                        .iter()
                        .map(|s| s.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            println!(
                "replay {}: {} outputs identical",
                recorded.stage,
                recorded.outputs.len()
            );
        }
    }
    Ok(())
}
