//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p concept-coreset-cli --test acceptance -- --nocapture`.
//! The criteria run sequentially inside one test so timings are measured
//! on a single thread.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use concept_coreset::bench::{self, generate_synthetic, BenchConfig, SyntheticSpec};
use concept_coreset::bottleneck::{assemble_bottleneck, select_discriminative};
use concept_coreset::sampler::{ccs_select, ccs_select_budget, CutoffTable, Mode, SelectionSpec};
use concept_coreset::scorer::{
    compute_aum, concept_similarity, cross_entropy, cross_entropy_grad, score_dataset,
    train_bottleneck, zero_shot_pseudo_labels, Likelihood, SimilarityMatrix, Supervision,
    TrainerConfig, Weights,
};
use concept_coreset::tensor_io::{Coreset, CoresetMeta, ScoreEntry, ScoreTable};
use concept_coreset::{EmbeddingMatrix, LabelVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn table_from(scores: &[f64]) -> ScoreTable {
    ScoreTable::new(
        scores
            .iter()
            .enumerate()
            .map(|(i, &aum)| ScoreEntry {
                index: i,
                label: 0,
                pseudo_label: None,
                aum,
                margins: None,
            })
            .collect(),
    )
    .unwrap()
}

/// Worst relative error between the analytic gradient and central
/// differences over random instances.
fn gradient_oracle(report: &mut Report) {
    let (result, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        let instances = 150;
        for _ in 0..instances {
            let n = rng.random_range(1..=32);
            let classes = rng.random_range(2..=5);
            let feats = rng.random_range(1..=20);
            let x = SimilarityMatrix::new(
                n,
                feats,
                (0..n * feats).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
            let w = Weights::from_vec(
                classes,
                feats,
                (0..classes * feats).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let batch: Vec<usize> = (0..n).collect();
            let (_, grad) = cross_entropy_grad(&x, &y, &w, &batch);
            let h = 1e-5;
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for k in 0..classes * feats {
                let mut up = w.clone();
                up.as_mut_slice()[k] += h;
                let mut down = w.clone();
                down.as_mut_slice()[k] -= h;
                let fd = (cross_entropy(&x, &y, &up, &batch) - cross_entropy(&x, &y, &down, &batch))
                    / (2.0 * h);
                let an = grad.as_slice()[k];
                diff = diff.max((an - fd).abs());
                scale = scale.max(an.abs()).max(fd.abs());
            }
            worst = worst.max(diff / scale.max(1e-12));
        }
        (instances, worst)
    });
    let (instances, worst) = result;
    report.record(
        "gradient oracle",
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
}

/// Margin recomputed by hand from a weight snapshot.
fn replayed_margin(x: &[f64], w: &Weights, y: usize, likelihood: Likelihood) -> f64 {
    let mut z: Vec<f64> = (0..w.classes())
        .map(|c| (0..x.len()).map(|f| w.get(c, f) * x[f]).sum())
        .collect();
    if likelihood == Likelihood::Softmax {
        let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|v| (v - top).exp()).sum();
        z = z.iter().map(|v| (v - top).exp() / total).collect();
    }
    let rival = (0..z.len()).filter(|&c| c != y).map(|c| z[c]).fold(f64::NEG_INFINITY, f64::max);
    z[y] - rival
}

fn aum_replay(report: &mut Report) {
    let data = generate_synthetic(&SyntheticSpec {
        classes: 4,
        per_class: 50,
        ..Default::default()
    })
    .unwrap();
    let bottleneck =
        assemble_bottleneck(select_discriminative(&data.catalog, 5).unwrap(), &data.concept_embeddings, true)
            .unwrap();
    let x = concept_similarity(&data.visual, &bottleneck.embeddings).unwrap();
    let mut worst = 0.0f64;
    for likelihood in [Likelihood::Softmax, Likelihood::Logit] {
        let cfg = TrainerConfig {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            likelihood,
            keep_snapshots: true,
            ..Default::default()
        };
        let out = train_bottleneck(&x, &data.labels, &cfg).unwrap();
        let aum = compute_aum(&out.trajectory).unwrap();
        for i in 0..x.rows() {
            let y = data.labels.get(i);
            let replay = out
                .snapshots
                .iter()
                .map(|w| replayed_margin(x.row(i), w, y, likelihood))
                .sum::<f64>()
                / out.snapshots.len() as f64;
            worst = worst.max((replay - aum[i]).abs());
        }
    }
    report.record(
        "AUM replay",
        worst <= 1e-6,
        format!("200 samples, softmax and logit margins, max |AUM - replay| {worst:.2e}"),
    );
}

fn ccs_hand_trace(report: &mut Report) {
    let scores: Vec<f64> = (1..=10).map(f64::from).collect();
    let table = table_from(&scores);
    let seeds = 500u64;
    let mut bad = Vec::new();
    for seed in 0..seeds {
        let spec = SelectionSpec {
            alpha: 0.6,
            beta: 0.2,
            bins: 2,
            seed,
            topup: true,
        };
        let out = ccs_select_budget(&table, &spec, 4).unwrap();
        let mut pruned: Vec<f64> = out.pruned.iter().map(|&i| scores[i]).collect();
        pruned.sort_by(f64::total_cmp);
        let low = out.coreset.indices().iter().filter(|&&i| (3.0..=6.0).contains(&scores[i])).count();
        let high = out.coreset.indices().iter().filter(|&&i| (7.0..=10.0).contains(&scores[i])).count();
        if pruned != [1.0, 2.0] || low != 2 || high != 2 || out.drawn_per_bin != [2, 2] || out.stratified != 4 {
            bad.push(seed);
        }
    }
    report.record(
        "CCS hand-trace",
        bad.is_empty(),
        format!("{seeds} seeds, 2 picks per bin and scores {{1,2}} pruned; failing seeds {bad:?}"),
    );
}

fn ccs_properties(report: &mut Report) {
    let (failures, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut failures: Vec<String> = Vec::new();
        for case in 0..1000 {
            let n = rng.random_range(1..400);
            // coarse grids force ties
            let grid = [0.0, 0.5, 0.05][rng.random_range(0..3)];
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(-3.0..3.0);
                    if grid > 0.0 { (v / grid).round() * grid } else { v }
                })
                .collect();
            let table = table_from(&scores);
            let spec = SelectionSpec {
                alpha: rng.random_range(0.0..0.99),
                beta: rng.random_range(0.0..0.6),
                bins: rng.random_range(1..60),
                seed: rng.random(),
                topup: true,
            };
            let pool = n - spec.cutoff_count(n);
            let m = spec.budget(n);
            if m == 0 || m > pool {
                // outside the feasible region; just check the refusal
                if m > pool && ccs_select(&table, &spec).is_ok() {
                    failures.push(format!("case {case}: infeasible budget accepted"));
                }
                continue;
            }
            let out = ccs_select(&table, &spec).unwrap();
            let idx = out.coreset.indices();
            let mut why = Vec::new();
            if idx.len() != m {
                why.push("size");
            }
            if out.stratified > m {
                why.push("pre-topup count");
            }
            if !idx.windows(2).all(|w| w[0] < w[1]) {
                why.push("unique/sorted");
            }
            let max_pruned = out.pruned.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut in_pruned = vec![false; n];
            for &i in &out.pruned {
                in_pruned[i] = true;
            }
            let min_kept = (0..n).filter(|&i| !in_pruned[i]).map(|i| scores[i]).fold(f64::INFINITY, f64::min);
            if max_pruned > min_kept {
                why.push("pruned above retained");
            }
            if idx.iter().any(|&i| in_pruned[i]) {
                why.push("pruned sample selected");
            }
            let non_empty: Vec<_> = out.bins.iter().filter(|b| !b.members.is_empty()).collect();
            if m >= non_empty.len()
                && !non_empty
                    .iter()
                    .all(|b| b.members.iter().any(|i| idx.binary_search(i).is_ok()))
            {
                why.push("bin coverage");
            }
            if !why.is_empty() {
                failures.push(format!("case {case}: {}", why.join(", ")));
            }
        }
        failures
    });
    report.record(
        "CCS properties",
        failures.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "1000 instances in {:.2}s, {} violations {:?}",
            elapsed.as_secs_f64(),
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

fn cutoff_table(report: &mut Report) {
    // (dataset, mode, [(alpha %, beta %)])
    let expected: [(&str, Mode, [(u32, u32); 4]); 6] = [
        ("cifar10", Mode::Labeled, [(30, 0), (50, 0), (70, 10), (90, 30)]),
        ("cifar100", Mode::Labeled, [(30, 10), (50, 20), (70, 20), (90, 50)]),
        ("imagenet", Mode::Labeled, [(30, 0), (50, 10), (70, 20), (90, 30)]),
        ("cifar10", Mode::LabelFree, [(30, 0), (50, 0), (70, 20), (90, 40)]),
        ("cifar100", Mode::LabelFree, [(30, 0), (50, 20), (70, 40), (90, 50)]),
        ("imagenet", Mode::LabelFree, [(30, 0), (50, 10), (70, 20), (90, 30)]),
    ];
    let table = CutoffTable::builtin();
    let mut matched = [0usize; 2];
    let mut wrong = Vec::new();
    for (dataset, mode, pairs) in expected {
        for (a, b) in pairs {
            let alpha = a as f64 / 100.0;
            match table.lookup(dataset, alpha, mode) {
                Ok(beta) if (beta - b as f64 / 100.0).abs() < 1e-12 => {
                    matched[(mode == Mode::LabelFree) as usize] += 1
                }
                other => wrong.push(format!("{dataset} {mode} {alpha}: {other:?}")),
            }
        }
    }
    let extra = table.entries().len() != 24;
    report.record(
        "cutoff table",
        wrong.is_empty() && !extra,
        format!(
            "{} labeled + {} label-free entries match, table holds {} entries {wrong:?}",
            matched[0],
            matched[1],
            table.entries().len()
        ),
    );
}

fn desk_analog(report: &mut Report) {
    let cfg = BenchConfig::default();
    let (result, elapsed) = timed(|| bench::run_experiment(&cfg).unwrap());
    let (ccs, _) = bench::mean_std(&result.accuracies("concept-ccs", 0.9));
    let (rnd, _) = bench::mean_std(&result.accuracies("random", 0.9));
    let capture: Vec<f64> = result.scoring.iter().map(|s| s.capture_rate).collect();
    let (capture, _) = bench::mean_std(&capture);
    let gap = 100.0 * (ccs - rnd);
    report.record(
        "desk-scale analog",
        gap >= 2.0 && capture >= 0.8 && elapsed < Duration::from_secs(120),
        format!(
            "N=10, 200/class, d=64, rho=0.1, alpha=0.9, seeds {:?}: CCS {:.2}% vs random {:.2}% (gap {gap:+.2}), capture@0.3 {capture:.3}, {:.1}s",
            cfg.seeds,
            100.0 * ccs,
            100.0 * rnd,
            elapsed.as_secs_f64()
        ),
    );

    // noiseless-score invariant: flipped samples separate cleanly
    let auc: Vec<f64> = result.scoring.iter().map(|s| s.separation_auc).collect();
    let (auc, _) = bench::mean_std(&auc);
    report.record(
        "clean/flipped separation",
        auc > 0.95,
        format!("mean AUC {auc:.3}"),
    );
}

fn label_free(report: &mut Report) {
    let mut accs = Vec::new();
    let mut overlaps = Vec::new();
    for seed in 0..3u64 {
        let spec = SyntheticSpec {
            mislabel_rate: 0.0,
            noise_sigma: 0.15,
            seed,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let pseudo = zero_shot_pseudo_labels(&data.visual, &data.prompts).unwrap();
        let agree = (0..pseudo.len()).filter(|&i| pseudo.get(i) == data.true_labels.get(i)).count();
        accs.push(agree as f64 / pseudo.len() as f64);

        let bottleneck =
            assemble_bottleneck(select_discriminative(&data.catalog, 5).unwrap(), &data.concept_embeddings, true)
                .unwrap();
        let cfg = TrainerConfig {
            seed,
            ..Default::default()
        };
        let sel = SelectionSpec {
            alpha: 0.5,
            beta: CutoffTable::builtin().lookup("cifar10", 0.5, Mode::LabelFree).unwrap(),
            seed,
            ..Default::default()
        };
        let pick = |sup: Supervision| {
            let scored = score_dataset(&data.visual, &bottleneck.embeddings, &sup, &cfg, false).unwrap();
            ccs_select(&scored.table, &sel).unwrap().coreset
        };
        let labeled = pick(Supervision::Labels(data.labels.clone()));
        let free = pick(Supervision::Prompts(data.prompts.clone()));
        let shared = labeled.indices().iter().filter(|i| free.indices().binary_search(i).is_ok()).count();
        overlaps.push(shared as f64 / labeled.len() as f64);
    }
    let min_acc = accs.iter().cloned().fold(1.0, f64::min);
    let min_overlap = overlaps.iter().cloned().fold(1.0, f64::min);
    report.record(
        "label-free mode",
        min_acc >= 0.99 && min_overlap >= 0.9,
        format!(
            "rho=0, sigma=0.15, alpha=0.5, seeds 0-2: pseudo-label accuracy {accs:.4?}, coreset overlap {overlaps:.4?}"
        ),
    );
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_concept-coreset"))
        .current_dir(dir)
        .env_remove("CONCEPT_CORESET_OUT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut count = 0;
    for entry in fs::read_dir(a).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let other = b.join(entry.file_name());
        if entry.path().is_dir() {
            count += same_tree(&entry.path(), &other)?;
        } else {
            let name = entry.file_name();
            if name.to_string_lossy().ends_with(".manifest.json") {
                continue;
            }
            if fs::read(entry.path()).ok() != fs::read(&other).ok() {
                return Err(format!("{} differs", entry.path().display()));
            }
            count += 1;
        }
    }
    Ok(count)
}

fn cli_determinism(dir: &Path) -> Result<Vec<String>, String> {
    let bn = [
        "--catalog", "data/catalog.json",
        "--concept-names", "data/concept_names.json",
        "--concept-embeddings", "data/concepts.cbe",
    ];
    let stages: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--out", "data", "--classes", "5", "--per-class", "40"]),
        ("bottleneck", [&["bottleneck", "--out", "bn"][..], &bn].concat()),
        (
            "score",
            vec![
                "score", "--out", "sc", "--visual", "data/visual.cbe", "--labels", "data/labels.cbl",
                "--bottleneck-embeddings", "bn/bottleneck.cbe", "--epochs", "10", "--margins", "--seed", "4",
            ],
        ),
        (
            "select",
            vec![
                "select", "--out", "se", "--scores", "sc/scores.jsonl", "--visual", "data/visual.cbe",
                "--alpha", "0.7", "--dataset-tag", "cifar100", "--seed", "9",
            ],
        ),
        ("pseudo-label", vec!["pseudo-label", "--out", "pl", "--visual", "data/visual.cbe", "--prompts", "data/prompts.cbe"]),
        (
            "pipeline",
            [
                &["pipeline", "--out", "pi", "--visual", "data/visual.cbe", "--prompts", "data/prompts.cbe",
                  "--mode", "label-free", "--epochs", "10", "--alpha", "0.9", "--dataset-tag", "imagenet"][..],
                &bn,
            ]
            .concat(),
        ),
        (
            "bench",
            vec!["bench", "--out", "be", "--seeds", "0,1", "--classes", "3", "--per-class", "20", "--epochs", "5"],
        ),
    ];
    let mut lines = Vec::new();
    for (stage, args) in &stages {
        cli(dir, args)?;
        let out = args[2];
        let manifest = if *stage == "pipeline" {
            format!("{out}/pipeline.manifest.json")
        } else {
            format!("{out}/{stage}.manifest.json")
        };
        let replay_dir = format!("replay-{out}");
        cli(dir, &["replay", "--manifest", &manifest, "--out", &replay_dir])?;
        let files = same_tree(&dir.join(out), &dir.join(&replay_dir))?;
        lines.push(format!("{stage} ({files} files)"));
    }
    Ok(lines)
}

/// write -> read -> write is the identity on random valid files.
fn round_trips() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cases = 200;
    for case in 0..cases {
        let rows = rng.random_range(0..12);
        let cols = rng.random_range(1..9);
        let m = EmbeddingMatrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1e3f32..1e3)).collect(),
            false,
        )
        .unwrap();
        let bytes = m.to_bytes();
        let back = EmbeddingMatrix::from_bytes(&bytes).map_err(|e| e.to_string())?;
        if back != m || back.to_bytes() != bytes {
            return Err(format!("embedding case {case}"));
        }

        let classes = rng.random_range(1..20u32);
        let labels = LabelVector::new((0..rows).map(|_| rng.random_range(0..classes)).collect(), classes).unwrap();
        let bytes = labels.to_bytes();
        let back = LabelVector::from_bytes(&bytes).map_err(|e| e.to_string())?;
        if back != labels || back.to_bytes() != bytes {
            return Err(format!("label case {case}"));
        }

        let n = rng.random_range(1..15);
        let epochs = rng.random_range(1..5);
        let entries: Vec<ScoreEntry> = (0..n)
            .map(|i| {
                let margins: Vec<f64> = (0..epochs).map(|_| rng.random_range(-1.0..1.0)).collect();
                ScoreEntry {
                    index: i,
                    label: rng.random_range(0..5),
                    pseudo_label: rng.random_bool(0.5).then(|| rng.random_range(0..5)),
                    aum: margins.iter().sum::<f64>() / epochs as f64,
                    margins: Some(margins),
                }
            })
            .collect();
        let table = ScoreTable::new(entries).unwrap();
        let (text, margins) = (table.to_jsonl(), table.margins_to_jsonl().unwrap());
        let back = ScoreTable::from_jsonl(&text, Some(&margins)).map_err(|e| e.to_string())?;
        if back != table || back.to_jsonl() != text {
            return Err(format!("score case {case}"));
        }

        let picked: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let coreset = Coreset::new(
            picked.clone(),
            CoresetMeta {
                method: "ccs".into(),
                n,
                m: picked.len(),
                alpha: Some(rng.random_range(0.0..1.0)),
                beta: Some(rng.random_range(0.0..1.0)),
                bins: Some(rng.random_range(1..60)),
                seed: rng.random(),
                topup: rng.random_bool(0.5),
                dataset_hash: None,
                score_hash: Some("ab".repeat(32)),
            },
        )
        .unwrap();
        let text = coreset.to_text();
        let back = Coreset::from_text(&text).map_err(|e| e.to_string())?;
        if back != coreset || back.to_text() != text {
            return Err(format!("coreset case {case}"));
        }
    }
    Ok(cases)
}

fn determinism(report: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let stages = cli_determinism(tmp.path());
    let formats = round_trips();
    let pass = stages.is_ok() && formats.is_ok();
    let detail = format!(
        "replayed {}; round-trips: {}",
        match &stages {
            Ok(s) => s.join(", "),
            Err(e) => format!("error {e}"),
        },
        match &formats {
            Ok(n) => format!("{n} random cases x 4 formats identical"),
            Err(e) => format!("mismatch in {e}"),
        }
    );
    report.record("determinism", pass, detail);
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    gradient_oracle(&mut report);
    aum_replay(&mut report);
    ccs_hand_trace(&mut report);
    ccs_properties(&mut report);
    cutoff_table(&mut report);
    desk_analog(&mut report);
    label_free(&mut report);
    determinism(&mut report);

    let failed: Vec<&String> = report.lines.iter().filter(|(ok, _)| !ok).map(|(_, l)| l).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        report.lines.len() - failed.len(),
        report.lines.len()
    );
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
