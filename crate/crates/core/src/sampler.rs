//! Coverage-centric coreset selection.
//!
//! The hardest `floor(n·β)` samples (lowest AUM) are dropped, the remaining
//! score range is cut into `b` equal-width bins, and bins are visited from
//! the smallest up. Each bin receives an equal share of whatever budget is
//! left, capped by its size, so sparse regions of the score distribution
//! are fully kept while dense ones are subsampled.

use std::cmp::Ordering;

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor_io::{Coreset, CoresetMeta, FormatError, ScoreTable};

pub const DEFAULT_BINS: usize = 50;

// Guards floor/round of products like 10 * 0.7 = 7.000000000000001 and
// 100 * 0.29 = 28.999999999999996 against representation error.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("budget {m} exceeds the {pool} samples left after pruning")]
    BudgetExceedsPool { m: usize, pool: usize },
    #[error("invalid selection spec: {0}")]
    InvalidSpec(String),
    #[error("no built-in cutoff rate for dataset {dataset:?} at alpha {alpha} ({mode}); pass beta explicitly")]
    UnknownConfig {
        dataset: String,
        alpha: f64,
        mode: Mode,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Whether scores were computed against annotated or zero-shot labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Labeled,
    LabelFree,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Labeled => "labeled",
            Mode::LabelFree => "label-free",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" => Ok(Mode::Labeled),
            "label-free" | "label_free" | "labelfree" => Ok(Mode::LabelFree),
            other => Err(format!("unknown mode {other:?} (labeled|label-free)")),
        }
    }
}

/// Pruning rate `alpha` (fraction removed), cutoff rate `beta`, bin count,
/// seed and whether to top up to the exact budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub alpha: f64,
    pub beta: f64,
    pub bins: usize,
    pub seed: u64,
    pub topup: bool,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        SelectionSpec {
            alpha: 0.0,
            beta: 0.0,
            bins: DEFAULT_BINS,
            seed: 0,
            topup: true,
        }
    }
}

impl SelectionSpec {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(SelectError::InvalidSpec(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(SelectError::InvalidSpec(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if self.bins < 1 {
            return Err(SelectError::InvalidSpec("bins must be at least 1".into()));
        }
        Ok(())
    }

    /// `round(n·(1-alpha))`.
    pub fn budget(&self, n: usize) -> usize {
        (n as f64 * (1.0 - self.alpha) + COUNT_EPS).round() as usize
    }

    /// `floor(n·beta)`.
    pub fn cutoff_count(&self, n: usize) -> usize {
        ((n as f64 * self.beta + COUNT_EPS).floor() as usize).min(n)
    }
}

/// One score interval and the samples that fell in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    /// Sample indices, ascending.
    pub members: Vec<usize>,
}

/// Everything [`ccs_select`] decided, for inspection and testing.
#[derive(Debug, Clone)]
pub struct CcsOutcome {
    pub coreset: Coreset,
    /// Pruned samples, hardest first.
    pub pruned: Vec<usize>,
    pub bins: Vec<Bin>,
    /// Samples drawn by the stratified pass (before any top-up).
    pub stratified: usize,
    /// Per bin (same order as `bins`), how many were drawn from it.
    pub drawn_per_bin: Vec<usize>,
}

fn by_score(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

/// Splits `[min, max]` of the pool's scores into `bins` equal-width
/// intervals, the last one closed on the right.
pub fn equal_width_bins(scores: &[f64], pool: &[usize], bins: usize) -> Vec<Bin> {
    if pool.is_empty() {
        return Vec::new();
    }
    let lo = pool.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let hi = pool.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin {
            lower: lo + b as f64 * width,
            upper: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            members: Vec::new(),
        })
        .collect();
    let mut sorted = pool.to_vec();
    sorted.sort_unstable();
    for i in sorted {
        let b = if width > 0.0 {
            (((scores[i] - lo) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        out[b].members.push(i);
    }
    out
}

/// One seeded random key per sample index.
///
/// Drawing the `k` lowest-keyed members of a group is a uniform sample
/// without replacement, and a sample's fate depends only on its own key and
/// its group. Small changes to group membership therefore only move the
/// samples involved instead of reshuffling every draw.
fn priority_keys(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

fn lowest_keys(members: &[usize], keys: &[u64], k: usize) -> Vec<usize> {
    let mut ranked = members.to_vec();
    ranked.sort_unstable_by_key(|&i| (keys[i], i));
    ranked.truncate(k);
    ranked
}

/// Coverage-centric selection with the budget `round(n·(1-alpha))`.
pub fn ccs_select(scores: &ScoreTable, spec: &SelectionSpec) -> Result<CcsOutcome, SelectError> {
    spec.validate()?;
    let m = spec.budget(scores.len());
    ccs_select_budget(scores, spec, m)
}

/// Coverage-centric selection with an explicit budget `m` (`alpha` is only
/// recorded in the metadata).
pub fn ccs_select_budget(
    scores: &ScoreTable,
    spec: &SelectionSpec,
    m: usize,
) -> Result<CcsOutcome, SelectError> {
    spec.validate()?;
    let aum = scores.scores_by_index();
    let n = aum.len();
    if n == 0 {
        return Err(SelectError::InvalidSpec("score table is empty".into()));
    }
    if m == 0 {
        return Err(SelectError::InvalidSpec("budget must be at least 1".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(by_score(&aum));
    let cut = spec.cutoff_count(n);
    let pruned = order[..cut].to_vec();
    let pool = &order[cut..];
    if m > pool.len() {
        if spec.topup {
            return Err(SelectError::BudgetExceedsPool {
                m,
                pool: pool.len(),
            });
        }
        log::warn!("budget {m} exceeds pool of {}; selection will be short", pool.len());
    }

    let bins = equal_width_bins(&aum, pool, spec.bins);
    let mut visit: Vec<usize> = (0..bins.len()).filter(|&b| !bins[b].members.is_empty()).collect();
    visit.sort_by_key(|&b| (bins[b].members.len(), b));

    let keys = priority_keys(n, spec.seed);
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(m);
    let mut drawn_per_bin = vec![0; bins.len()];
    let mut remaining = m;
    for (step, &b) in visit.iter().enumerate() {
        let members = &bins[b].members;
        let left = visit.len() - step;
        let take = members.len().min(remaining / left);
        for i in lowest_keys(members, &keys, take) {
            chosen[i] = true;
            selected.push(i);
        }
        drawn_per_bin[b] = take;
        remaining -= take;
    }
    let stratified = selected.len();

    if spec.topup && remaining > 0 {
        let rest: Vec<usize> = pool.iter().copied().filter(|&i| !chosen[i]).collect();
        selected.extend(lowest_keys(&rest, &keys, remaining));
    }
    selected.sort_unstable();

    let meta = CoresetMeta {
        method: "ccs".into(),
        n,
        m,
        alpha: Some(spec.alpha),
        beta: Some(spec.beta),
        bins: Some(spec.bins),
        seed: spec.seed,
        topup: spec.topup,
        dataset_hash: None,
        score_hash: None,
    };
    Ok(CcsOutcome {
        coreset: Coreset::new(selected, meta)?,
        pruned,
        bins,
        stratified,
        drawn_per_bin,
    })
}

/// `m` indices drawn uniformly without replacement from `0..n`, ascending.
pub fn random_select(n: usize, m: usize, seed: u64) -> Result<Coreset, SelectError> {
    if m > n {
        return Err(SelectError::BudgetExceedsPool { m, pool: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let meta = CoresetMeta {
        method: "random".into(),
        n,
        m,
        alpha: None,
        beta: None,
        bins: None,
        seed,
        topup: false,
        dataset_hash: None,
        score_hash: None,
    };
    Ok(Coreset::new(picked, meta)?)
}

/// Published cutoff rates keyed by dataset, pruning rate and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntry {
    pub dataset: String,
    /// Pruning rate in whole percent.
    pub alpha_pct: u32,
    pub mode: Mode,
    /// Cutoff rate in whole percent.
    pub beta_pct: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffTable {
    entries: Vec<CutoffEntry>,
}

/// (alpha %, beta %) pairs for one dataset and mode.
type CutoffRow = (&'static str, Mode, [(u32, u32); 4]);

const BUILTIN_CUTOFFS: &[CutoffRow] = &[
    ("cifar10", Mode::Labeled, [(30, 0), (50, 0), (70, 10), (90, 30)]),
    ("cifar100", Mode::Labeled, [(30, 10), (50, 20), (70, 20), (90, 50)]),
    ("imagenet", Mode::Labeled, [(30, 0), (50, 10), (70, 20), (90, 30)]),
    ("cifar10", Mode::LabelFree, [(30, 0), (50, 0), (70, 20), (90, 40)]),
    ("cifar100", Mode::LabelFree, [(30, 0), (50, 20), (70, 40), (90, 50)]),
    ("imagenet", Mode::LabelFree, [(30, 0), (50, 10), (70, 20), (90, 30)]),
];

/// `"CIFAR-10"`, `"cifar_10"` and `"cifar10"` all name the same dataset.
pub fn canonical_dataset_tag(tag: &str) -> String {
    tag.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl CutoffTable {
    pub fn builtin() -> Self {
        let entries = BUILTIN_CUTOFFS
            .iter()
            .flat_map(|(dataset, mode, pairs)| {
                pairs.iter().map(move |&(alpha_pct, beta_pct)| CutoffEntry {
                    dataset: dataset.to_string(),
                    alpha_pct,
                    mode: *mode,
                    beta_pct,
                })
            })
            .collect();
        CutoffTable { entries }
    }

    pub fn entries(&self) -> &[CutoffEntry] {
        &self.entries
    }

    pub fn lookup(&self, dataset: &str, alpha: f64, mode: Mode) -> Result<f64, SelectError> {
        let tag = canonical_dataset_tag(dataset);
        self.entries
            .iter()
            .find(|e| {
                e.dataset == tag
                    && e.mode == mode
                    && (e.alpha_pct as f64 / 100.0 - alpha).abs() < 1e-9
            })
            .map(|e| e.beta_pct as f64 / 100.0)
            .ok_or(SelectError::UnknownConfig {
                dataset: dataset.to_string(),
                alpha,
                mode,
            })
    }
}

/// Free function form of [`CutoffTable::lookup`] on the built-in table.
pub fn lookup_cutoff(dataset: &str, alpha: f64, mode: Mode) -> Result<f64, SelectError> {
    CutoffTable::builtin().lookup(dataset, alpha, mode)
}
