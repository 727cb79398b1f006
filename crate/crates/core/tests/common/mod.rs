#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use aspectsim::{AspectId, Corpus, EmbeddingMatrix, PaperRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn aspects() -> Vec<AspectId> {
    AspectId::defaults()
}

/// `n` papers; each gets 0..=max_per_paper labels per aspect drawn from
/// `labels` names.
pub fn random_corpus(n: usize, labels: usize, max_per_paper: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aspects = aspects();
    let records = (0..n)
        .map(|i| {
            let labels: BTreeMap<AspectId, BTreeSet<String>> = aspects
                .iter()
                .map(|a| {
                    let count = rng.random_range(0..=max_per_paper);
                    let set = (0..count)
                        .map(|_| format!("{a}-{}", rng.random_range(0..labels)))
                        .collect();
                    (a.clone(), set)
                })
                .collect();
            PaperRecord {
                paper_id: format!("d{i:04}"),
                title: format!("Paper {i}"),
                abstract_text: String::new(),
                labels,
            }
        })
        .collect();
    Corpus::from_records(records, &aspects).unwrap()
}

/// Random Gaussian rows, optionally with duplicated rows to force score ties.
pub fn random_matrix(ids: &[String], dim: usize, duplicates: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

pub fn ids(corpus: &Corpus) -> Vec<String> {
    corpus.papers().iter().map(|p| p.paper_id.clone()).collect()
}

/// Brute-force relevance: two papers share a label of the aspect whose total
/// paper count is at most `max_label_size`.
pub struct LabelOracle {
    labels: BTreeMap<String, BTreeSet<String>>,
}

impl LabelOracle {
    pub fn new(corpus: &Corpus, aspect: &AspectId, max_label_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for p in corpus.papers() {
            for l in p.labels_for(aspect).into_iter().flatten() {
                *counts.entry(l.clone()).or_default() += 1;
            }
        }
        let labels = corpus
            .papers()
            .iter()
            .map(|p| {
                let kept = p
                    .labels_for(aspect)
                    .into_iter()
                    .flatten()
                    .filter(|l| counts[*l] <= max_label_size)
                    .cloned()
                    .collect();
                (p.paper_id.clone(), kept)
            })
            .collect();
        LabelOracle { labels }
    }

    pub fn labels(&self, id: &str) -> &BTreeSet<String> {
        &self.labels[id]
    }

    pub fn shares(&self, a: &str, b: &str) -> bool {
        a != b
            && self.labels[a]
                .intersection(&self.labels[b])
                .next()
                .is_some()
    }

    pub fn relevant_count(&self, seed: &str) -> usize {
        self.labels.keys().filter(|c| self.shares(seed, c)).count()
    }
}
