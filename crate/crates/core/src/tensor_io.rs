//! On-disk formats and in-memory containers.
//!
//! Two little-endian binary formats carry dense data:
//!
//! | file  | layout |
//! |-------|--------|
//! | CBE1  | `"CBE1"`, u32 version (=1), u64 rows, u64 cols, u8 normalized, rows·cols × f32 row-major |
//! | CBL1  | `"CBL1"`, u32 version (=1), u64 n, u32 class count, n × u32 labels |
//!
//! Score tables and coresets are line-delimited JSON so they stay easy to
//! inspect with ordinary text tools.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CBE1";
pub const LABEL_MAGIC: &[u8; 4] = b"CBL1";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on row norms for matrices flagged as normalized.
pub const NORM_TOLERANCE: f32 = 1e-5;

const EMBEDDING_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;
const LABEL_HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("payload length {actual} bytes disagrees with header ({expected} bytes)")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} at position {position} is out of range for {num_classes} classes")]
    OutOfRangeLabel {
        position: usize,
        label: u32,
        num_classes: u32,
    },
    #[error("row {row} has L2 norm {norm} but the matrix is flagged as normalized")]
    NotNormalized { row: usize, norm: f32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid record at line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Dense row-major `f32` matrix of encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix, checking shape and finiteness. When `normalized` is
    /// set every row must already have unit L2 norm.
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        normalized: bool,
    ) -> Result<Self, FormatError> {
        if data.len() != rows * cols {
            return Err(FormatError::Shape(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        let m = EmbeddingMatrix {
            rows,
            cols,
            data,
            normalized,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f32>], normalized: bool) -> Result<Self, FormatError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(FormatError::Shape(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data, normalized)
    }

    /// Empty matrix with a fixed embedding dimension.
    pub fn empty(cols: usize) -> Self {
        EmbeddingMatrix {
            rows: 0,
            cols,
            data: Vec::new(),
            normalized: false,
        }
    }

    fn validate(&self) -> Result<(), FormatError> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    row: i / self.cols.max(1),
                    col: i % self.cols.max(1),
                });
            }
        }
        if self.normalized {
            for r in 0..self.rows {
                let norm = l2_norm(self.row(r));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(FormatError::NotNormalized { row: r, norm });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Returns a copy with every row scaled to unit L2 norm. Zero rows are
    /// rejected since they have no direction.
    pub fn normalized_rows(&self) -> Result<Self, FormatError> {
        let mut data = Vec::with_capacity(self.data.len());
        for (r, row) in self.iter_rows().enumerate() {
            let norm = l2_norm_f64(row);
            if norm == 0.0 {
                return Err(FormatError::NotNormalized { row: r, norm: 0.0 });
            }
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Self::new(self.rows, self.cols, data, true)
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
            normalized: self.normalized,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(EMBEDDING_HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        buf.push(u8::from(self.normalized));
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        check_magic(bytes, EMBEDDING_MAGIC)?;
        if bytes.len() < EMBEDDING_HEADER_LEN {
            return Err(FormatError::TruncatedPayload {
                expected: EMBEDDING_HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        check_version(read_u32(&bytes[4..8]))?;
        let rows = read_u64(&bytes[8..16]);
        let cols = read_u64(&bytes[16..24]);
        let normalized = match bytes[24] {
            0 => false,
            1 => true,
            other => {
                return Err(FormatError::InvalidRecord {
                    line: 0,
                    message: format!("normalized flag must be 0 or 1, found {other}"),
                })
            }
        };
        let payload = &bytes[EMBEDDING_HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| FormatError::Shape(format!("{rows}x{cols} overflows")))?;
        if payload.len() as u64 != expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                actual: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(rows as usize, cols as usize, data, normalized)
    }
}

/// Class ids for each sample, with the declared class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    num_classes: u32,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: u32) -> Result<Self, FormatError> {
        if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes)
        {
            return Err(FormatError::OutOfRangeLabel {
                position,
                label,
                num_classes,
            });
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        LabelVector {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(LABEL_HEADER_LEN + self.labels.len() * 4);
        buf.extend_from_slice(LABEL_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.num_classes.to_le_bytes());
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        check_magic(bytes, LABEL_MAGIC)?;
        if bytes.len() < LABEL_HEADER_LEN {
            return Err(FormatError::TruncatedPayload {
                expected: LABEL_HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        check_version(read_u32(&bytes[4..8]))?;
        let n = read_u64(&bytes[8..16]);
        let num_classes = read_u32(&bytes[16..20]);
        let payload = &bytes[LABEL_HEADER_LEN..];
        let expected = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::Shape(format!("{n} labels overflows")))?;
        if payload.len() as u64 != expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                actual: payload.len() as u64,
            });
        }
        let labels = payload.chunks_exact(4).map(read_u32).collect();
        Self::new(labels, num_classes)
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<(), FormatError> {
    let found = &bytes[..bytes.len().min(4)];
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn check_version(found: u32) -> Result<(), FormatError> {
    if found != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn read_u64(b: &[u8]) -> u64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[..8]);
    u64::from_le_bytes(a)
}

pub(crate) fn l2_norm(v: &[f32]) -> f32 {
    l2_norm_f64(v) as f32
}

fn l2_norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| FormatError::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_labels(path: impl AsRef<Path>, v: &LabelVector) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, v.to_bytes()).map_err(|e| FormatError::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    LabelVector::from_bytes(&bytes)
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub index: usize,
    pub label: u32,
    pub pseudo_label: Option<u32>,
    pub aum: f64,
    #[serde(skip)]
    pub margins: Option<Vec<f64>>,
}

impl ScoreEntry {
    /// The class the score was computed against.
    pub fn target(&self) -> u32 {
        self.pseudo_label.unwrap_or(self.label)
    }
}

#[derive(Serialize, Deserialize)]
struct MarginRecord {
    index: usize,
    margins: Vec<f64>,
}

/// Tolerance between a stored AUM and the mean of its stored margins.
pub const AUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self, FormatError> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for (line, e) in entries.iter().enumerate() {
            if !seen.insert(e.index) {
                return Err(FormatError::InvalidRecord {
                    line,
                    message: format!("duplicate index {}", e.index),
                });
            }
            if !e.aum.is_finite() {
                return Err(FormatError::InvalidRecord {
                    line,
                    message: format!("non-finite aum for index {}", e.index),
                });
            }
            if let Some(m) = &e.margins {
                if m.is_empty() {
                    return Err(FormatError::InvalidRecord {
                        line,
                        message: format!("empty margin trajectory for index {}", e.index),
                    });
                }
                let mean = m.iter().sum::<f64>() / m.len() as f64;
                if (mean - e.aum).abs() > AUM_TOLERANCE {
                    return Err(FormatError::InvalidRecord {
                        line,
                        message: format!(
                            "aum {} differs from mean margin {} for index {}",
                            e.aum, mean, e.index
                        ),
                    });
                }
            }
        }
        if let Some(max) = entries.iter().map(|e| e.index).max() {
            if max >= entries.len() {
                return Err(FormatError::InvalidRecord {
                    line: entries.iter().position(|e| e.index == max).unwrap_or(0),
                    message: format!("index {max} out of range for {} entries", entries.len()),
                });
            }
        }
        Ok(ScoreTable { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// AUM indexed by sample index.
    pub fn scores_by_index(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.index] = e.aum;
        }
        out
    }

    pub fn has_margins(&self) -> bool {
        self.entries.iter().all(|e| e.margins.is_some())
    }

    /// Line-delimited JSON, one `{index, label, pseudo_label, aum}` per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("score entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Side file of full margin trajectories, `{index, margins}` per line.
    pub fn margins_to_jsonl(&self) -> Option<String> {
        if !self.has_margins() || self.entries.is_empty() {
            return None;
        }
        let mut out = String::new();
        for e in &self.entries {
            let rec = MarginRecord {
                index: e.index,
                margins: e.margins.clone().unwrap_or_default(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("margin record serializes"));
            out.push('\n');
        }
        Some(out)
    }

    pub fn from_jsonl(text: &str, margins: Option<&str>) -> Result<Self, FormatError> {
        let mut entries: Vec<ScoreEntry> = parse_jsonl(text)?;
        if let Some(m) = margins {
            let recs: Vec<MarginRecord> = parse_jsonl(m)?;
            let mut by_index = std::collections::HashMap::with_capacity(recs.len());
            for r in recs {
                by_index.insert(r.index, r.margins);
            }
            for e in &mut entries {
                e.margins = by_index.remove(&e.index);
            }
        }
        Self::new(entries)
    }
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FormatError::InvalidRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, table: &ScoreTable) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, table.to_jsonl()).map_err(|e| FormatError::io(path, e))
}

pub fn write_margins(path: impl AsRef<Path>, table: &ScoreTable) -> Result<bool, FormatError> {
    let path = path.as_ref();
    match table.margins_to_jsonl() {
        Some(text) => {
            fs::write(path, text).map_err(|e| FormatError::io(path, e))?;
            Ok(true)
        }
        None => Ok(false),
    }
}

pub fn read_scores(
    path: impl AsRef<Path>,
    margins: Option<&Path>,
) -> Result<ScoreTable, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let margin_text = margins
        .map(|p| fs::read_to_string(p).map_err(|e| FormatError::io(p, e)))
        .transpose()?;
    ScoreTable::from_jsonl(&text, margin_text.as_deref())
}

/// Provenance carried in the header line of a coreset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetMeta {
    /// `"ccs"` or `"random"`.
    pub method: String,
    /// Size of the pool the indices were drawn from.
    pub n: usize,
    /// Requested budget.
    pub m: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub bins: Option<usize>,
    pub seed: u64,
    pub topup: bool,
    pub dataset_hash: Option<String>,
    pub score_hash: Option<String>,
}

/// Selected sample indices, ascending and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    indices: Vec<usize>,
    pub meta: CoresetMeta,
}

impl Coreset {
    pub fn new(indices: Vec<usize>, meta: CoresetMeta) -> Result<Self, FormatError> {
        for (i, w) in indices.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(FormatError::InvalidRecord {
                    line: i + 2,
                    message: "indices must be strictly ascending".into(),
                });
            }
        }
        if let Some(&last) = indices.last() {
            if last >= meta.n {
                return Err(FormatError::InvalidRecord {
                    line: indices.len() + 1,
                    message: format!("index {last} out of range for n = {}", meta.n),
                });
            }
        }
        Ok(Coreset { indices, meta })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// JSON header line followed by one index per line.
    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("coreset meta serializes");
        out.push('\n');
        for i in &self.indices {
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(FormatError::InvalidRecord {
            line: 1,
            message: "missing header".into(),
        })?;
        let meta: CoresetMeta =
            serde_json::from_str(header).map_err(|e| FormatError::InvalidRecord {
                line: 1,
                message: e.to_string(),
            })?;
        let indices = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse().map_err(|_| FormatError::InvalidRecord {
                    line: i + 2,
                    message: format!("not an index: {l:?}"),
                })
            })
            .collect::<Result<Vec<usize>, _>>()?;
        Self::new(indices, meta)
    }
}

pub fn write_coreset(path: impl AsRef<Path>, c: &Coreset) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    f.write_all(c.to_text().as_bytes())
        .map_err(|e| FormatError::io(path, e))
}

pub fn read_coreset(path: impl AsRef<Path>) -> Result<Coreset, FormatError> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(|e| FormatError::io(path, e))?);
        text.push('\n');
    }
    Coreset::from_text(&text)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn embedding_round_trip_small() {
        let m = EmbeddingMatrix::from_rows(&[vec![1., 2., 3.], vec![4., 5., 6.]], false).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 25 + 24);
        assert_eq!(&bytes[..4], b"CBE1");
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn empty_embedding_file_is_valid() {
        let m = EmbeddingMatrix::empty(7);
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.cols(), 7);
    }

    #[test]
    fn payload_mismatch_is_truncated_payload() {
        let m = EmbeddingMatrix::from_rows(&[vec![1., 2., 3.], vec![4., 5., 6.]], false).unwrap();
        let mut bytes = m.to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(FormatError::TruncatedPayload { expected: 24, actual: 20 })
        ));
        let mut long = m.to_bytes();
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&long),
            Err(FormatError::TruncatedPayload { .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::from_bytes(b"CBE1\x01\0"),
            Err(FormatError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn distinct_header_errors() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0]], false).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(FormatError::BadMagic { .. })
        ));
        let mut bytes = m.to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(FormatError::VersionMismatch { found: 2, .. })
        ));
        let mut bytes = m.to_bytes();
        bytes[25..29].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(FormatError::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn normalized_flag_is_checked() {
        assert!(matches!(
            EmbeddingMatrix::from_rows(&[vec![3.0, 4.0]], true),
            Err(FormatError::NotNormalized { row: 0, .. })
        ));
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0]], false)
            .unwrap()
            .normalized_rows()
            .unwrap();
        assert!(m.is_normalized());
        assert_eq!(m.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn labels_round_trip_and_range() {
        let v = LabelVector::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(LabelVector::from_bytes(&v.to_bytes()).unwrap(), v);
        assert!(matches!(
            LabelVector::new(vec![5], 3),
            Err(FormatError::OutOfRangeLabel { label: 5, num_classes: 3, .. })
        ));
        let empty = LabelVector::new(vec![], 4).unwrap();
        let back = LabelVector::from_bytes(&empty.to_bytes()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.num_classes(), 4);

        // out-of-range label smuggled into a file
        let mut bytes = v.to_bytes();
        bytes[20..24].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            LabelVector::from_bytes(&bytes),
            Err(FormatError::OutOfRangeLabel { label: 9, .. })
        ));
    }

    #[test]
    fn score_table_checks_mean_of_margins() {
        let good = ScoreEntry {
            index: 0,
            label: 1,
            pseudo_label: None,
            aum: 0.4,
            margins: Some(vec![0.2, 0.4, 0.6]),
        };
        let t = ScoreTable::new(vec![good.clone()]).unwrap();
        let back = ScoreTable::from_jsonl(&t.to_jsonl(), t.margins_to_jsonl().as_deref()).unwrap();
        assert_eq!(back, t);

        let bad = ScoreEntry { aum: 0.5, ..good };
        assert!(ScoreTable::new(vec![bad]).is_err());
    }

    #[test]
    fn score_table_rejects_duplicate_and_out_of_range_indices() {
        let e = |index| ScoreEntry {
            index,
            label: 0,
            pseudo_label: None,
            aum: 0.0,
            margins: None,
        };
        assert!(ScoreTable::new(vec![e(0), e(0)]).is_err());
        assert!(ScoreTable::new(vec![e(0), e(2)]).is_err());
        assert!(ScoreTable::new(vec![e(1), e(0)]).is_ok());
    }

    #[test]
    fn coreset_text_format() {
        let meta = CoresetMeta {
            method: "random".into(),
            n: 10,
            m: 3,
            alpha: None,
            beta: None,
            bins: None,
            seed: 7,
            topup: true,
            dataset_hash: None,
            score_hash: None,
        };
        let c = Coreset::new(vec![1, 4, 9], meta.clone()).unwrap();
        let text = c.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.ends_with("1\n4\n9\n"));
        assert_eq!(Coreset::from_text(&text).unwrap(), c);
        assert!(Coreset::new(vec![4, 1], meta.clone()).is_err());
        assert!(Coreset::new(vec![10], meta).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn embeddings_round_trip(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>(), normalize in any::<bool>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-10.0f32..10.0) + 0.01).collect();
            let mut m = EmbeddingMatrix::new(rows, cols, data, false).unwrap();
            if normalize {
                m = m.normalized_rows().unwrap();
            }
            let bytes = m.to_bytes();
            let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn labels_round_trip(labels in proptest::collection::vec(0u32..7, 0..50)) {
            let v = LabelVector::new(labels, 7).unwrap();
            prop_assert_eq!(LabelVector::from_bytes(&v.to_bytes()).unwrap(), v);
        }
    }
}
