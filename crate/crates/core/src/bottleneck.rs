//! Concept bottleneck construction.
//!
//! Each class contributes its own name plus up to `k - 1` attributes that no
//! other class lists. Attribute order follows the catalog, so a stored
//! catalog always reproduces the same bottleneck.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::tensor_io::{self, EmbeddingMatrix, FormatError};

/// Concepts per class that gave the best results in ablations.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum BottleneckError {
    #[error("k must be at least 1 (got {0})")]
    InvalidK(usize),
    #[error("catalog has no classes")]
    EmptyCatalog,
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("no embedding for concepts: {}", .0.join(", "))]
    MissingConceptEmbedding(Vec<String>),
    #[error("concept embeddings disagree on dimension: {0}")]
    DimensionMismatch(String),
    #[error("catalog JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Canonical form used for uniqueness tests: lowercase, trimmed, with
/// trailing punctuation removed.
pub fn normalize_concept(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .trim()
        .to_string()
}

/// Per-class concept lists as produced by the attribute generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCatalog {
    classes: Vec<String>,
    concepts: Vec<Vec<String>>,
}

impl ConceptCatalog {
    /// Builds a catalog, dropping within-class duplicates (after
    /// normalization) and empty strings. Class names must be unique.
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self, BottleneckError> {
        let mut seen = HashSet::new();
        let mut classes = Vec::with_capacity(entries.len());
        let mut concepts = Vec::with_capacity(entries.len());
        for (class, list) in entries {
            let class = class.trim().to_string();
            if !seen.insert(normalize_concept(&class)) {
                return Err(BottleneckError::DuplicateClass(class));
            }
            let mut local = HashSet::new();
            let list = list
                .into_iter()
                .map(|c| c.trim().to_string())
                .filter(|c| {
                    let key = normalize_concept(c);
                    !key.is_empty() && local.insert(key)
                })
                .collect();
            classes.push(class);
            concepts.push(list);
        }
        Ok(ConceptCatalog { classes, concepts })
    }

    /// Parses `{"class name": ["concept", ...], ...}` keeping key order.
    pub fn from_json(text: &str) -> Result<Self, BottleneckError> {
        let map: IndexMap<String, Vec<String>> = serde_json::from_str(text)?;
        Self::new(map.into_iter().collect())
    }

    pub fn to_json(&self) -> String {
        let map: IndexMap<&str, &Vec<String>> = self
            .classes
            .iter()
            .map(String::as_str)
            .zip(self.concepts.iter())
            .collect();
        serde_json::to_string_pretty(&map).expect("catalog serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, BottleneckError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn concepts(&self, class: usize) -> &[String] {
        &self.concepts[class]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Concepts kept for one class; the first entry is the class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConcepts {
    pub class: String,
    pub concepts: Vec<String>,
}

/// String-level bottleneck, before embeddings are attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub k: usize,
    pub classes: Vec<ClassConcepts>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Selection {
    /// Concepts in E_C row order.
    pub fn flattened(&self) -> Vec<&str> {
        self.classes
            .iter()
            .flat_map(|c| c.concepts.iter().map(String::as_str))
            .collect()
    }

    pub fn num_concepts(&self) -> usize {
        self.classes.iter().map(|c| c.concepts.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BottleneckError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Picks `[class name] + first (k-1) attributes unique to that class`.
///
/// An attribute is unique when its normalized form appears in no other
/// class's list and does not collide with any class name. Classes left with
/// fewer than `k` concepts are kept short and reported in `warnings`.
pub fn select_discriminative(
    catalog: &ConceptCatalog,
    k: usize,
) -> Result<Selection, BottleneckError> {
    if k < 1 {
        return Err(BottleneckError::InvalidK(k));
    }
    if catalog.classes.is_empty() {
        return Err(BottleneckError::EmptyCatalog);
    }
    let class_keys: HashSet<String> = catalog.classes.iter().map(|c| normalize_concept(c)).collect();

    // number of classes listing each normalized attribute
    let mut owners: HashMap<String, usize> = HashMap::new();
    for list in &catalog.concepts {
        for c in list {
            *owners.entry(normalize_concept(c)).or_default() += 1;
        }
    }

    let mut classes = Vec::with_capacity(catalog.classes.len());
    let mut warnings = Vec::new();
    for (class, list) in catalog.classes.iter().zip(&catalog.concepts) {
        let mut concepts = vec![class.clone()];
        concepts.extend(
            list.iter()
                .filter(|c| {
                    let key = normalize_concept(c);
                    owners[&key] == 1 && !class_keys.contains(&key)
                })
                .take(k - 1)
                .cloned(),
        );
        if concepts.len() < k {
            warnings.push(format!(
                "class {class:?}: only {} of {} concepts are discriminative",
                concepts.len(),
                k
            ));
        }
        classes.push(ClassConcepts {
            class: class.clone(),
            concepts,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Selection {
        k,
        classes,
        warnings,
    })
}

/// Text embeddings keyed by concept string.
///
/// Stored as a CBE1 matrix plus a JSON array of the concept strings, one per
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEmbeddings {
    names: Vec<String>,
    matrix: EmbeddingMatrix,
    exact: HashMap<String, usize>,
    normalized: HashMap<String, usize>,
}

impl ConceptEmbeddings {
    pub fn new(names: Vec<String>, matrix: EmbeddingMatrix) -> Result<Self, BottleneckError> {
        if names.len() != matrix.rows() {
            return Err(BottleneckError::DimensionMismatch(format!(
                "{} names for {} embedding rows",
                names.len(),
                matrix.rows()
            )));
        }
        let mut exact = HashMap::with_capacity(names.len());
        let mut normalized = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            exact.entry(n.clone()).or_insert(i);
            normalized.entry(normalize_concept(n)).or_insert(i);
        }
        Ok(ConceptEmbeddings {
            names,
            matrix,
            exact,
            normalized,
        })
    }

    pub fn from_pairs(pairs: &[(&str, Vec<f32>)]) -> Result<Self, BottleneckError> {
        let dim = pairs.first().map_or(0, |p| p.1.len());
        if let Some((name, v)) = pairs.iter().find(|p| p.1.len() != dim) {
            return Err(BottleneckError::DimensionMismatch(format!(
                "{name:?} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        let rows: Vec<Vec<f32>> = pairs.iter().map(|p| p.1.clone()).collect();
        let matrix = EmbeddingMatrix::from_rows(&rows, false)?;
        Self::new(pairs.iter().map(|p| p.0.to_string()).collect(), matrix)
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    /// Exact match first, then normalized match.
    pub fn get(&self, concept: &str) -> Option<&[f32]> {
        self.exact
            .get(concept)
            .or_else(|| self.normalized.get(&normalize_concept(concept)))
            .map(|&i| self.matrix.row(i))
    }

    pub fn read(
        names_path: impl AsRef<Path>,
        matrix_path: impl AsRef<Path>,
    ) -> Result<Self, BottleneckError> {
        let names_path = names_path.as_ref();
        let text = fs::read_to_string(names_path).map_err(|source| FormatError::Io {
            path: names_path.display().to_string(),
            source,
        })?;
        let names: Vec<String> = serde_json::from_str(&text)?;
        Self::new(names, tensor_io::read_embeddings(matrix_path)?)
    }

    pub fn write(
        &self,
        names_path: impl AsRef<Path>,
        matrix_path: impl AsRef<Path>,
    ) -> Result<(), BottleneckError> {
        let names_path = names_path.as_ref();
        fs::write(names_path, serde_json::to_string_pretty(&self.names)?).map_err(|source| {
            FormatError::Io {
                path: names_path.display().to_string(),
                source,
            }
        })?;
        tensor_io::write_embeddings(matrix_path, &self.matrix)?;
        Ok(())
    }
}

/// Selected concepts with their embedding matrix E_C.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub selection: Selection,
    /// One row per concept, in `selection.flattened()` order.
    pub embeddings: EmbeddingMatrix,
}

impl Bottleneck {
    pub fn num_concepts(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.selection.classes.len()
    }
}

/// Stacks the embedding of every selected concept into E_C, optionally
/// scaling rows to unit norm.
pub fn assemble_bottleneck(
    selection: Selection,
    embeddings: &ConceptEmbeddings,
    normalize: bool,
) -> Result<Bottleneck, BottleneckError> {
    let flat = selection.flattened();
    let missing: Vec<String> = flat
        .iter()
        .filter(|c| embeddings.get(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(BottleneckError::MissingConceptEmbedding(missing));
    }
    let mut data = Vec::with_capacity(flat.len() * embeddings.dim());
    for c in &flat {
        data.extend_from_slice(embeddings.get(c).expect("checked above"));
    }
    let mut matrix = EmbeddingMatrix::new(flat.len(), embeddings.dim(), data, false)?;
    if normalize {
        matrix = matrix.normalized_rows()?;
    }
    Ok(Bottleneck {
        selection,
        embeddings: matrix,
    })
}
