//! Per-stage manifests: the resolved parameters plus digests of every input
//! and output, enough to re-run a stage and check the result bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use concept_coreset::tensor_io::file_sha256;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TOOL: &str = "concept-coreset";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    /// Output file name (relative to the stage directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, params: &impl Serialize) -> Result<Self, CliError> {
        Ok(Manifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            params: serde_json::to_value(params)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<String, CliError> {
        let sha256 = file_sha256(path)?;
        self.inputs.insert(
            role.into(),
            FileDigest {
                path: path.to_path_buf(),
                sha256: sha256.clone(),
            },
        );
        Ok(sha256)
    }

    pub fn output(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.outputs.insert(name.into(), file_sha256(dir.join(name))?);
        Ok(())
    }

    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(Self::file_name(&self.stage));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(CliError::Config(format!(
                "{} was not written by {TOOL}",
                path.display()
            )));
        }
        Ok(m)
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<String>, CliError> {
        let mut changed = Vec::new();
        for (role, d) in &self.inputs {
            if file_sha256(&d.path)? != d.sha256 {
                changed.push(role.clone());
            }
        }
        Ok(changed)
    }
}
