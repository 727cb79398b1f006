//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero when any check fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use aspectsim::baseline::{build_pair_dataset, filter_size_sweep, train_pairwise, PairwiseConfig};
use aspectsim::evaluation::{classification_report, evaluate_method};
use aspectsim::ground_truth::{
    generate_pairs, make_folds, split_pairs, GroundTruthConfig, RelevanceIndex,
};
use aspectsim::retrieval::{build_index, Query};
use aspectsim::specializer::{contrastive_loss, cosine_with_grad, mnrl_loss};
use aspectsim::synthetic::{generate, SyntheticConfig};
use aspectsim::{AspectId, Corpus, EmbeddingMatrix, LossKind, PaperRecord, SimilarityIndex};
use aspectsim_service::config::{GenericSource, PipelineConfig};
use aspectsim_service::fixture::{synthetic_pipeline, write_fixture};
use aspectsim_service::manifest::MANIFEST_FILE;
use aspectsim_service::pipeline::{
    generic_results_path, run_pipeline, specialized_results_path, METRICS_JSON, METRICS_TABLE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-9;
const FD_EPS: f64 = 1e-5;
const FD_REL: f64 = 1e-3;
const MIN_PROBES: usize = 100;
const MIN_GAIN: f64 = 0.20;
const OVERLAP_K: usize = 50;
const SPECIALIZATION_SEEDS: [u64; 3] = [1, 2, 3];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) {
        let start = Instant::now();
        let outcome = f().unwrap_or_else(|e| Outcome::Fail(format!("{e:#}")));
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Outcome::Pass(d), Some(b)) if elapsed > b => {
                Outcome::Fail(format!("{d}; took {elapsed:.1?}, budget {b:?}"))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
    }
}

fn main() {
    let mut suite = Suite { failed: 0 };
    suite.check(
        "metric oracle",
        Some(Duration::from_secs(10)),
        metric_oracle,
    );
    suite.check(
        "knn exactness",
        Some(Duration::from_secs(60)),
        knn_exactness,
    );
    suite.check("ground-truth counts", None, ground_truth_counts);
    suite.check("gradient checks", None, gradient_checks);
    let mut runs = None;
    suite.check(
        "specialization effect",
        Some(Duration::from_secs(300)),
        || {
            let r = specialization_runs()?;
            let outcome = specialization_effect(&r);
            runs = Some(r);
            outcome
        },
    );
    suite.check("bias surfacing", None, || match &runs {
        Some(r) => bias_surfacing(r),
        None => bail!("specialization runs did not complete"),
    });
    suite.check("baseline protocol", None, baseline_protocol);
    suite.check("determinism", None, || match &runs {
        Some(r) => determinism(r),
        None => bail!("specialization runs did not complete"),
    });
    suite.check("external corpus", None, external_corpus);
    if suite.failed > 0 {
        println!("{} acceptance check(s) failed", suite.failed);
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

fn random_corpus(n: usize, labels: usize, max_per_paper: usize, rng: &mut ChaCha8Rng) -> Corpus {
    let aspects = AspectId::defaults();
    let records = (0..n)
        .map(|i| PaperRecord {
            paper_id: format!("d{:05}", (i * 7919) % 100_003),
            title: format!("Paper {i}"),
            abstract_text: String::new(),
            labels: aspects
                .iter()
                .map(|a| {
                    let count = rng.random_range(0..=max_per_paper);
                    let set = (0..count)
                        .map(|_| format!("{a}-{}", rng.random_range(0..labels)))
                        .collect();
                    (a.clone(), set)
                })
                .collect(),
        })
        .collect();
    Corpus::from_records(records, &aspects).unwrap()
}

fn random_matrix(
    ids: &[String],
    dim: usize,
    duplicates: usize,
    rng: &mut ChaCha8Rng,
) -> EmbeddingMatrix {
    let mut rows: Vec<Vec<f32>> = ids
        .iter()
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    for _ in 0..duplicates {
        let from = rng.random_range(0..rows.len());
        let to = rng.random_range(0..rows.len());
        rows[to] = rows[from].clone();
    }
    EmbeddingMatrix::from_rows("random", dim, ids.iter().cloned().zip(rows)).unwrap()
}

fn corpus_ids(corpus: &Corpus) -> Vec<String> {
    corpus.papers().iter().map(|p| p.paper_id.clone()).collect()
}

// ----------------------------------------------------------------- oracles

/// Filtered labels per paper, counted straight from the records.
struct Labels(BTreeMap<String, BTreeSet<String>>);

impl Labels {
    fn new(corpus: &Corpus, aspect: &AspectId, max_label_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in corpus.papers() {
            for l in p.labels_for(aspect).into_iter().flatten() {
                *counts.entry(l).or_default() += 1;
            }
        }
        Labels(
            corpus
                .papers()
                .iter()
                .map(|p| {
                    let kept = p
                        .labels_for(aspect)
                        .into_iter()
                        .flatten()
                        .filter(|l| counts[l.as_str()] <= max_label_size)
                        .cloned()
                        .collect();
                    (p.paper_id.clone(), kept)
                })
                .collect(),
        )
    }

    fn shares(&self, a: &str, b: &str) -> bool {
        a != b && self.0[a].iter().any(|l| self.0[b].contains(l))
    }

    fn relevant(&self, seed: &str) -> usize {
        self.0.keys().filter(|c| self.shares(seed, c)).count()
    }
}

/// `[P, R, MRR, MAP]` averaged over seeds with at least one relevant paper,
/// plus the number of such seeds.
fn brute_metrics(
    rankings: &BTreeMap<String, Vec<String>>,
    labels: &Labels,
    k: usize,
) -> ([f64; 4], usize) {
    let mut sum = [0.0; 4];
    let mut used = 0;
    for (seed, ranked) in rankings {
        let r = labels.relevant(seed);
        if r == 0 {
            continue;
        }
        used += 1;
        let mut hits = 0.0;
        let mut ap = 0.0;
        let mut rr = 0.0;
        for (pos, c) in ranked.iter().take(k).enumerate() {
            if labels.shares(seed, c) {
                hits += 1.0;
                ap += hits / (pos + 1) as f64;
                if rr == 0.0 {
                    rr = 1.0 / (pos + 1) as f64;
                }
            }
        }
        sum[0] += hits / k as f64;
        sum[1] += hits / r as f64;
        sum[2] += rr;
        sum[3] += ap / r.min(k) as f64;
    }
    (
        sum.map(|s| if used == 0 { 0.0 } else { s / used as f64 }),
        used,
    )
}

fn full_sort(index: &SimilarityIndex, seed: &str) -> Vec<(String, f64)> {
    let q = index.vector(seed).unwrap();
    let mut all: Vec<(String, f64)> = index
        .ids()
        .iter()
        .filter(|id| id.as_str() != seed)
        .map(|id| {
            let dot: f64 = q
                .iter()
                .zip(index.vector(id).unwrap())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            (id.clone(), dot.clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all
}

/// `seed -> candidates in rank order` from a results file.
fn read_rankings(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut out: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        ensure!(f.len() == 4, "bad results line `{line}`");
        out.entry(f[0].into())
            .or_default()
            .push((f[1].parse()?, f[2].into()));
    }
    Ok(out
        .into_iter()
        .map(|(s, mut v)| {
            v.sort();
            (s, v.into_iter().map(|(_, c)| c).collect())
        })
        .collect())
}

fn mean_overlap(
    a: &BTreeMap<String, Vec<String>>,
    b: &BTreeMap<String, Vec<String>>,
    k: usize,
) -> f64 {
    let total: f64 = a
        .iter()
        .map(|(seed, ra)| {
            let top: HashSet<&String> = ra.iter().take(k).collect();
            b[seed].iter().take(k).filter(|c| top.contains(c)).count() as f64 / k as f64
        })
        .sum();
    total / a.len() as f64
}

// ---------------------------------------------------------------- criteria

fn metric_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let corpus = random_corpus(200, 8, 2, &mut rng);
    let ids = corpus_ids(&corpus);
    let index = build_index(&random_matrix(&ids, 24, 10, &mut rng))?;
    let results = index.batch_knn(ids.iter().map(String::as_str), 10)?;
    let rankings: BTreeMap<String, Vec<String>> = results
        .iter()
        .map(|(s, r)| (s.clone(), r.ids().map(String::from).collect()))
        .collect();
    // A cap below the largest label size so the filter drops some labels.
    let max_label_size = 30;
    let mut worst = 0.0f64;
    let mut compared = 0;
    for aspect in AspectId::defaults() {
        let relevance = RelevanceIndex::build(&corpus, &aspect, max_label_size)?;
        let labels = Labels::new(&corpus, &aspect, max_label_size);
        for k in [1, 5, 10] {
            let row = evaluate_method(&results, &relevance, k, 0)?;
            let (expected, used) = brute_metrics(&rankings, &labels, k);
            ensure!(
                row.seeds == used,
                "{aspect} k={k}: {} seeds vs oracle {used}",
                row.seeds
            );
            ensure!(
                row.skipped == 200 - used,
                "{aspect} k={k}: skipped {}",
                row.skipped
            );
            let m = row.metrics;
            for (name, got, want) in [
                ("P", m.precision, expected[0]),
                ("R", m.recall, expected[1]),
                ("MRR", m.mrr, expected[2]),
                ("MAP", m.map, expected[3]),
            ] {
                let diff = (got - want).abs();
                worst = worst.max(diff);
                ensure!(
                    diff <= METRIC_TOL,
                    "{aspect} k={k} {name}: {got} vs oracle {want}"
                );
                compared += 1;
            }
        }
    }
    Ok(Outcome::Pass(format!(
        "{compared} values, max |diff| {worst:.1e}"
    )))
}

fn knn_exactness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fixtures = [(5000, 16), (3000, 64), (2000, 128), (1000, 384), (600, 768)];
    let mut queries = 0;
    for (n, dim) in fixtures {
        let ids: Vec<String> = (0..n)
            .map(|i| format!("doc{:05}", (i * 7919) % 100_003))
            .collect();
        let index = build_index(&random_matrix(&ids, dim, n / 20, &mut rng))?;
        let seeds: BTreeSet<usize> = (0..200).map(|_| rng.random_range(0..n)).collect();
        for s in seeds {
            let seed = &ids[s];
            let k = [1, 10, 50, n - 1][queries % 4];
            let got = index.knn(Query::Id(seed), k)?;
            let want = full_sort(&index, seed);
            let got: Vec<(&str, f64)> = got.hits.iter().map(|h| (h.id.as_str(), h.score)).collect();
            let want: Vec<(&str, f64)> =
                want.iter().take(k).map(|(i, s)| (i.as_str(), *s)).collect();
            ensure!(
                got == want,
                "n={n} dim={dim} seed {seed} k={k} differs from the full sort"
            );
            queries += 1;
        }
    }
    Ok(Outcome::Pass(format!(
        "{queries}/{queries} queries over 5 fixtures"
    )))
}

fn ground_truth_counts() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut fixtures = 0;
    let mut positives = 0;
    for (n, vocab, cap) in [
        (40, 4, 100),
        (120, 10, 20),
        (250, 25, 100),
        (400, 40, 15),
        (500, 30, 100),
    ] {
        let corpus = random_corpus(n, vocab, 2, &mut rng);
        let ids = corpus_ids(&corpus);
        for aspect in AspectId::defaults() {
            let config = GroundTruthConfig {
                max_label_size: cap,
                rng_seed: rng.random(),
                ..Default::default()
            };
            let gt = generate_pairs(&corpus, &aspect, &config)?;
            let labels = Labels::new(&corpus, &aspect, cap);
            let mut expected = BTreeSet::new();
            for (i, a) in ids.iter().enumerate() {
                for b in &ids[i + 1..] {
                    if labels.shares(a, b) {
                        expected.insert((a.min(b).clone(), a.max(b).clone()));
                    }
                }
            }
            let got: BTreeSet<(String, String)> = gt
                .positives
                .iter()
                .map(|p| {
                    (
                        p.doc_a.clone().min(p.doc_b.clone()),
                        p.doc_a.clone().max(p.doc_b.clone()),
                    )
                })
                .collect();
            ensure!(
                got.len() == gt.positives.len(),
                "n={n} {aspect}: duplicate positives"
            );
            ensure!(
                got == expected,
                "n={n} {aspect}: {} positives vs oracle {}",
                got.len(),
                expected.len()
            );
            ensure!(
                gt.negatives.len() == expected.len() / 2,
                "n={n} {aspect}: {} negatives for {} positives",
                gt.negatives.len(),
                expected.len()
            );
            let mut seen = HashSet::new();
            for neg in &gt.negatives {
                let (a, b) = (&neg.doc_a, &neg.doc_b);
                ensure!(a != b, "self pair {a}");
                ensure!(
                    !labels.shares(a, b),
                    "n={n} {aspect}: negative ({a}, {b}) shares a label"
                );
                ensure!(
                    !labels.0[a].is_empty() && !labels.0[b].is_empty(),
                    "negative with an unlabeled paper"
                );
                ensure!(
                    seen.insert((a.min(b), a.max(b))),
                    "duplicate negative ({a}, {b})"
                );
                ensure!(!neg.y, "negative flagged as positive");
            }
            fixtures += 1;
            positives += expected.len();
        }
    }
    Ok(Outcome::Pass(format!(
        "{fixtures} corpus/aspect fixtures, {positives} positives, no leakage"
    )))
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_REL * analytic.abs().max(numeric.abs()) + 1e-8
}

fn plain_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn gradient_checks() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);

    let mut cosine = 0;
    while cosine < MIN_PROBES {
        let dim = rng.random_range(2..12);
        let (a, b) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
        let (cos, ga, gb) = cosine_with_grad(&a, &b)?;
        ensure!((cos - plain_cos(&a, &b)).abs() <= 1e-12, "cosine value");
        let (i, side) = (rng.random_range(0..dim), rng.random::<bool>());
        let at = |d: f64| {
            let (mut a2, mut b2) = (a.clone(), b.clone());
            if side {
                a2[i] += d
            } else {
                b2[i] += d
            }
            plain_cos(&a2, &b2)
        };
        let numeric = (at(FD_EPS) - at(-FD_EPS)) / (2.0 * FD_EPS);
        let analytic = if side { ga[i] } else { gb[i] };
        ensure!(
            close(analytic, numeric),
            "cosine probe {cosine}: {analytic} vs {numeric}"
        );
        cosine += 1;
    }

    let (margin_pos, margin_neg) = (0.9, 0.3);
    let hinge = |a: &[f64], b: &[f64], similar: bool| {
        let c = plain_cos(a, b);
        if similar {
            (margin_pos - c).max(0.0)
        } else {
            (c - margin_neg).max(0.0)
        }
    };
    let mut contrastive = 0;
    while contrastive < MIN_PROBES {
        let dim = rng.random_range(2..12);
        let (a, b) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
        let similar = rng.random::<bool>();
        let exact = contrastive_loss(&a, &b, similar, margin_pos, margin_neg)?;
        ensure!(
            (exact.loss - hinge(&a, &b, similar)).abs() <= 1e-12,
            "contrastive value"
        );
        // Central differences are meaningless across the hinge corner.
        if exact.loss < 1e-3 {
            continue;
        }
        let (i, side) = (rng.random_range(0..dim), rng.random::<bool>());
        let at = |d: f64| {
            let (mut a2, mut b2) = (a.clone(), b.clone());
            if side {
                a2[i] += d
            } else {
                b2[i] += d
            }
            hinge(&a2, &b2, similar)
        };
        let numeric = (at(FD_EPS) - at(-FD_EPS)) / (2.0 * FD_EPS);
        let analytic = if side {
            exact.grad_a[i]
        } else {
            exact.grad_b[i]
        };
        ensure!(
            close(analytic, numeric),
            "contrastive probe {contrastive}: {analytic} vs {numeric}"
        );
        contrastive += 1;
    }

    let softmax_ce = |anchors: &[Vec<f64>], positives: &[Vec<f64>], scale: f64| {
        let mut total = 0.0;
        for (i, a) in anchors.iter().enumerate() {
            let logits: Vec<f64> = positives.iter().map(|p| scale * plain_cos(a, p)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse - logits[i];
        }
        total / anchors.len() as f64
    };
    let mut mnrl = 0;
    while mnrl < MIN_PROBES {
        let batch = rng.random_range(1..7);
        let dim = rng.random_range(2..10);
        let anchors: Vec<Vec<f64>> = (0..batch).map(|_| random_vec(&mut rng, dim)).collect();
        let positives: Vec<Vec<f64>> = (0..batch).map(|_| random_vec(&mut rng, dim)).collect();
        let scale = [1.0, 5.0, 20.0][mnrl % 3];
        let exact = mnrl_loss(&anchors, &positives, scale)?;
        let want = softmax_ce(&anchors, &positives, scale);
        ensure!(
            (exact.loss - want).abs() <= 1e-9 * want.abs().max(1.0),
            "mnrl value {} vs {want}",
            exact.loss
        );
        let (row, i, side) = (
            rng.random_range(0..batch),
            rng.random_range(0..dim),
            rng.random::<bool>(),
        );
        let at = |d: f64| {
            let (mut a2, mut p2) = (anchors.clone(), positives.clone());
            if side {
                a2[row][i] += d
            } else {
                p2[row][i] += d
            }
            softmax_ce(&a2, &p2, scale)
        };
        let numeric = (at(FD_EPS) - at(-FD_EPS)) / (2.0 * FD_EPS);
        let analytic = if side {
            exact.grad_anchors[row][i]
        } else {
            exact.grad_positives[row][i]
        };
        ensure!(
            close(analytic, numeric),
            "mnrl probe {mnrl}: {analytic} vs {numeric}"
        );
        mnrl += 1;
    }

    let v = random_vec(&mut rng, 8);
    let single = mnrl_loss(std::slice::from_ref(&v), &[random_vec(&mut rng, 8)], 20.0)?.loss;
    ensure!(single.abs() <= 1e-9, "B=1 loss {single}");
    let mut worst = single.abs();
    for b in [2usize, 3, 16, 64] {
        let batch = vec![v.clone(); b];
        let loss = mnrl_loss(&batch, &batch, 20.0)?.loss;
        let diff = (loss - (b as f64).ln()).abs();
        ensure!(diff <= 1e-9, "identical batch B={b}: {loss} vs ln B");
        worst = worst.max(diff);
    }
    Ok(Outcome::Pass(format!(
        "{cosine} cosine, {contrastive} contrastive, {mnrl} mnrl probes; fixed points within {worst:.1e}"
    )))
}

struct SpecializationRun {
    _dir: tempfile::TempDir,
    seed: u64,
    config: PipelineConfig,
    /// Fold-0 rankings of the generic space.
    generic: BTreeMap<String, Vec<String>>,
    specialized: BTreeMap<(AspectId, LossKind), BTreeMap<String, Vec<String>>>,
    labels: BTreeMap<AspectId, Labels>,
}

fn specialization_pipeline(seed: u64) -> PipelineConfig {
    let mut config = synthetic_pipeline(seed);
    config.folds = 5;
    config.eval_folds = Some(vec![0]);
    config
}

fn specialization_runs() -> Result<Vec<SpecializationRun>> {
    SPECIALIZATION_SEEDS
        .iter()
        .map(|&seed| {
            let dir = tempfile::tempdir()?;
            let synthetic = SyntheticConfig {
                seed,
                ..SyntheticConfig::default()
            };
            let paths = write_fixture(
                &dir.path().join("fixture"),
                &synthetic,
                &specialization_pipeline(seed),
            )?;
            let config = PipelineConfig::load(&paths.config)?;
            let run = dir.path().join("run");
            run_pipeline(&config, &run, false)?;
            let corpus = generate(&synthetic)?.corpus;
            let generic = read_rankings(&run.join(generic_results_path(0)))?;
            let mut specialized = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for aspect in &config.aspects {
                for &loss in &config.losses {
                    let path = run.join(specialized_results_path(aspect, loss, 0));
                    specialized.insert((aspect.clone(), loss), read_rankings(&path)?);
                }
                labels.insert(
                    aspect.clone(),
                    Labels::new(&corpus, aspect, config.max_label_size),
                );
            }
            Ok(SpecializationRun {
                _dir: dir,
                seed,
                config,
                generic,
                specialized,
                labels,
            })
        })
        .collect()
}

fn specialization_effect(runs: &[SpecializationRun]) -> Result<Outcome> {
    let mut lowest: Option<(f64, String)> = None;
    let mut failures = Vec::new();
    for run in runs {
        for ((aspect, loss), rankings) in &run.specialized {
            let labels = &run.labels[aspect];
            let base = brute_metrics(&run.generic, labels, 10).0[3];
            let map = brute_metrics(rankings, labels, 10).0[3];
            let gain = map / base - 1.0;
            let where_ = format!(
                "seed {} {aspect}/{loss} {base:.3}->{map:.3} ({:+.0}%)",
                run.seed,
                gain * 100.0
            );
            if gain < MIN_GAIN {
                failures.push(where_.clone());
            }
            if lowest.as_ref().is_none_or(|(g, _)| gain < *g) {
                lowest = Some((gain, where_));
            }
        }
    }
    let lowest = lowest.map(|(_, w)| w).unwrap_or_default();
    Ok(if failures.is_empty() {
        Outcome::Pass(format!("18 MAP@10 gains >= 20%, smallest: {lowest}"))
    } else {
        Outcome::Fail(format!("below 20%: {}", failures.join("; ")))
    })
}

/// The generic space is built with the largest weight on the first aspect and
/// the smallest on the last; specializing the underweighted aspect must move
/// the neighborhoods further.
fn bias_surfacing(runs: &[SpecializationRun]) -> Result<Outcome> {
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        let over = run.config.aspects.first().context("no aspects")?;
        let under = run.config.aspects.last().context("no aspects")?;
        for &loss in &run.config.losses {
            let o_over = mean_overlap(
                &run.generic,
                &run.specialized[&(over.clone(), loss)],
                OVERLAP_K,
            );
            let o_under = mean_overlap(
                &run.generic,
                &run.specialized[&(under.clone(), loss)],
                OVERLAP_K,
            );
            let line = format!(
                "seed {} {loss}: {under} {o_under:.2} < {over} {o_over:.2}",
                run.seed
            );
            if o_under < o_over {
                details.push(line);
            } else {
                failures.push(line);
            }
        }
    }
    Ok(if failures.is_empty() {
        Outcome::Pass(format!("k={OVERLAP_K}; {}", details.join(", ")))
    } else {
        Outcome::Fail(format!("k={OVERLAP_K}; {}", failures.join(", ")))
    })
}

/// Mean MAP@10 at the smallest and largest candidate filter over three
/// single-aspect, three-cluster corpora.
fn baseline_sweep() -> Result<(f64, f64)> {
    let aspect = AspectId::new("task");
    let (mut small, mut large) = (0.0, 0.0);
    for seed in SPECIALIZATION_SEEDS {
        let data = generate(&SyntheticConfig {
            docs: 600,
            dim: 16,
            aspects: vec![aspect.clone()],
            weights: vec![1.0],
            labels_per_aspect: 3,
            noise: 2.0,
            second_label: 0.0,
            unlabeled: 0.0,
            seed,
        })?;
        let index = build_index(&data.generic)?;
        let folds = make_folds(
            data.corpus.papers().iter().map(|p| p.paper_id.clone()),
            4,
            seed,
        )?;
        let gt = generate_pairs(
            &data.corpus,
            &aspect,
            &GroundTruthConfig {
                max_label_size: usize::MAX,
                rng_seed: seed,
                ..Default::default()
            },
        )?;
        let split = split_pairs(gt.all_pairs(), &folds, 0)?;
        let dataset = build_pair_dataset(&split.train, &[&gt.relevance], &index, true);
        let config = PairwiseConfig {
            seed,
            ..Default::default()
        };
        let (model, _) = train_pairwise(
            &dataset.features,
            &dataset.gold,
            std::slice::from_ref(&aspect),
            &config,
        )?;
        let seeds: Vec<&str> = folds.test_ids(0).into_iter().collect();
        let curve = filter_size_sweep(&model, &seeds, &index, &gt.relevance, &[10, 300], 10, 0)?;
        small += curve[0].1.metrics.map / 3.0;
        large += curve[1].1.metrics.map / 3.0;
    }
    Ok((small, large))
}

fn baseline_protocol() -> Result<Outcome> {
    let (small, large) = baseline_sweep()?;
    let classes = [AspectId::new("task"), AspectId::new("method")];
    let mut predictions = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for i in 0..20usize {
        // task: 8 TP, 2 FP, 4 FN; method: 1 TP, 4 FP.
        let (task_p, task_g) = (i < 10, i < 8 || (10..14).contains(&i));
        let (method_p, method_g) = (i < 5, i < 1);
        predictions.insert(i, vec![task_p, method_p]);
        gold.insert(i, vec![task_g, method_g]);
    }
    let report = classification_report(&classes, &predictions, &gold)?;
    let (task, method) = (&report.classes[0].1, &report.classes[1].1);
    let counts = [
        (task.true_positives, 8),
        (task.false_positives, 2),
        (task.false_negatives, 4),
        (method.true_positives, 1),
        (method.false_positives, 4),
        (method.false_negatives, 0),
        (report.micro.true_positives, 9),
        (report.micro.false_positives, 6),
        (report.micro.false_negatives, 4),
    ];
    ensure!(
        counts.iter().all(|(a, b)| a == b),
        "confusion counts {counts:?}"
    );
    let ratios = [
        ("task P", task.precision, 8.0 / 10.0),
        ("task R", task.recall, 8.0 / 12.0),
        ("task F1", task.f1, 16.0 / 22.0),
        ("method P", method.precision, 1.0 / 5.0),
        ("method R", method.recall, 1.0),
        ("method F1", method.f1, 2.0 / 6.0),
        ("micro P", report.micro.precision, 9.0 / 15.0),
        ("micro R", report.micro.recall, 9.0 / 13.0),
        ("micro F1", report.micro.f1, 18.0 / 28.0),
        ("macro P", report.macro_precision, (0.8 + 0.2) / 2.0),
        ("macro R", report.macro_recall, (8.0 / 12.0 + 1.0) / 2.0),
        ("macro F1", report.macro_f1, (16.0 / 22.0 + 2.0 / 6.0) / 2.0),
    ];
    for (name, got, want) in ratios {
        ensure!((got - want).abs() <= 1e-12, "{name}: {got} vs {want}");
    }
    let detail = format!("mean MAP@10 n=10 {small:.4}, n=300 {large:.4}; confusion report exact");
    Ok(if large >= small {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    })
}

fn determinism(runs: &[SpecializationRun]) -> Result<Outcome> {
    let first = runs.first().context("no runs")?;
    let again = tempfile::tempdir()?;
    run_pipeline(&first.config, again.path(), false)?;
    let a = std::fs::read(first._dir.path().join("run").join(MANIFEST_FILE))?;
    let b = std::fs::read(again.path().join(MANIFEST_FILE))?;
    let hash = |bytes: &[u8]| aspectsim_service::manifest::sha256_hex(bytes);
    let (ha, hb) = (hash(&a), hash(&b));
    Ok(if a == b {
        Outcome::Pass(format!(
            "seed {} manifests identical, sha256 {}",
            first.seed,
            &ha[..16]
        ))
    } else {
        Outcome::Fail(format!("manifest sha256 {ha} vs {hb}"))
    })
}

fn external_corpus() -> Result<Outcome> {
    let (Ok(corpus), Ok(vectors)) = (
        std::env::var("ASPECTSIM_PWC_CORPUS"),
        std::env::var("ASPECTSIM_PWC_VECTORS"),
    ) else {
        return Ok(Outcome::Skip(
            "set ASPECTSIM_PWC_CORPUS and ASPECTSIM_PWC_VECTORS to run".into(),
        ));
    };
    let config = PipelineConfig {
        corpus: corpus.into(),
        generic: GenericSource {
            method: std::env::var("ASPECTSIM_PWC_METHOD").unwrap_or_else(|_| "generic".into()),
            tokens: None,
            vectors: Some(vectors.into()),
        },
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir()?;
    run_pipeline(&config, dir.path(), false)?;
    let table = std::fs::read_to_string(dir.path().join(METRICS_TABLE))?;
    ensure!(dir.path().join(METRICS_JSON).is_file(), "no metrics report");
    ensure!(table.lines().count() > 2, "empty metrics table");
    Ok(Outcome::Pass(format!(
        "report with {} lines",
        table.lines().count()
    )))
}
