//! Pair ground truth and cross-validation folds.
//!
//! For one aspect, positives are all unordered pairs of papers that share at
//! least one label after dropping oversized labels; negatives are sampled
//! among labeled papers that share none. Folds split papers, not pairs, so a
//! pair is usable for training only when both endpoints are training papers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_labels, AspectId, Corpus, DEFAULT_MAX_LABEL_SIZE};
use crate::error::{Error, Result};

/// Unordered pair with a binary similarity label; `doc_a < doc_b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub aspect: AspectId,
    pub doc_a: String,
    pub doc_b: String,
    pub y: bool,
}

impl PairSample {
    /// Builds a pair in canonical order.
    pub fn new(
        aspect: AspectId,
        a: impl Into<String>,
        b: impl Into<String>,
        y: bool,
    ) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(Error::invalid(format!("pair endpoints are both `{a}`")));
        }
        let (doc_a, doc_b) = if a < b { (a, b) } else { (b, a) };
        Ok(PairSample {
            aspect,
            doc_a,
            doc_b,
            y,
        })
    }
}

/// Which filtered labels each paper carries for one aspect.
#[derive(Debug, Clone)]
pub struct RelevanceIndex {
    aspect: AspectId,
    labels: HashMap<String, BTreeSet<String>>,
    members: BTreeMap<String, Vec<String>>,
}

impl RelevanceIndex {
    pub fn build(corpus: &Corpus, aspect: &AspectId, max_label_size: usize) -> Result<Self> {
        let vocab = filter_labels(corpus.vocabulary(aspect)?, max_label_size)?;
        let mut labels = HashMap::new();
        let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for paper in corpus.papers() {
            let Some(own) = paper.labels_for(aspect) else {
                continue;
            };
            let kept: BTreeSet<String> =
                own.iter().filter(|l| vocab.contains(l)).cloned().collect();
            if kept.is_empty() {
                continue;
            }
            for label in &kept {
                members
                    .entry(label.clone())
                    .or_default()
                    .push(paper.paper_id.clone());
            }
            labels.insert(paper.paper_id.clone(), kept);
        }
        Ok(RelevanceIndex {
            aspect: aspect.clone(),
            labels,
            members,
        })
    }

    pub fn aspect(&self) -> &AspectId {
        &self.aspect
    }

    /// Filtered labels of a paper; `None` for papers without any.
    pub fn labels(&self, paper_id: &str) -> Option<&BTreeSet<String>> {
        self.labels.get(paper_id)
    }

    /// Label → member papers (sorted by id).
    pub fn members(&self) -> &BTreeMap<String, Vec<String>> {
        &self.members
    }

    /// Papers carrying at least one filtered label, sorted.
    pub fn labeled_papers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.labels.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn is_relevant(&self, seed: &str, candidate: &str) -> bool {
        match (self.labels.get(seed), self.labels.get(candidate)) {
            (Some(a), Some(b)) => seed != candidate && a.intersection(b).next().is_some(),
            _ => false,
        }
    }

    /// Filtered labels shared by two papers.
    pub fn shared_labels(&self, a: &str, b: &str) -> Vec<String> {
        match (self.labels.get(a), self.labels.get(b)) {
            (Some(x), Some(y)) => x.intersection(y).cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Number of other papers relevant to `seed`.
    pub fn relevant_count(&self, seed: &str) -> usize {
        self.relevant_set(seed).len()
    }

    pub fn relevant_set(&self, seed: &str) -> HashSet<&str> {
        let mut set = HashSet::new();
        if let Some(own) = self.labels.get(seed) {
            for label in own {
                for member in &self.members[label] {
                    if member != seed {
                        set.insert(member.as_str());
                    }
                }
            }
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub max_label_size: usize,
    pub neg_ratio: f64,
    pub rng_seed: u64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            max_label_size: DEFAULT_MAX_LABEL_SIZE,
            neg_ratio: 0.5,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub aspect: AspectId,
    pub positives: Vec<PairSample>,
    pub negatives: Vec<PairSample>,
    pub relevance: RelevanceIndex,
}

impl GroundTruth {
    pub fn is_relevant(&self, seed: &str, candidate: &str) -> bool {
        self.relevance.is_relevant(seed, candidate)
    }

    /// Positives followed by negatives.
    pub fn all_pairs(&self) -> impl Iterator<Item = &PairSample> {
        self.positives.iter().chain(&self.negatives)
    }
}

// Above this many candidate negatives sampling switches from enumeration to
// rejection sampling.
const ENUMERATION_LIMIT: usize = 4_000_000;

pub fn generate_pairs(
    corpus: &Corpus,
    aspect: &AspectId,
    config: &GroundTruthConfig,
) -> Result<GroundTruth> {
    if !(config.neg_ratio >= 0.0 && config.neg_ratio.is_finite()) {
        return Err(Error::invalid(
            "neg_ratio must be a finite non-negative number",
        ));
    }
    let relevance = RelevanceIndex::build(corpus, aspect, config.max_label_size)?;
    if relevance.members.is_empty() {
        return Err(Error::invalid(format!(
            "aspect `{aspect}` has no labels after filtering"
        )));
    }

    // Work on positions within the sorted labeled-paper list: position order
    // equals id order, so (i, j) with i < j is canonical.
    let eligible = relevance.labeled_papers();
    let position: HashMap<&str, u32> = eligible
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect();

    let mut positive_idx: Vec<(u32, u32)> = Vec::new();
    for members in relevance.members.values() {
        let idx: Vec<u32> = members.iter().map(|m| position[m.as_str()]).collect();
        for (i, &a) in idx.iter().enumerate() {
            for &b in &idx[i + 1..] {
                positive_idx.push((a.min(b), a.max(b)));
            }
        }
    }
    positive_idx.sort_unstable();
    positive_idx.dedup();
    if positive_idx.is_empty() {
        return Err(Error::invalid(format!(
            "aspect `{aspect}` has no positive pairs"
        )));
    }

    let m = eligible.len();
    let total = m * (m - 1) / 2;
    let available = total - positive_idx.len();
    let target = (config.neg_ratio * positive_idx.len() as f64).floor() as usize;
    if target > available {
        return Err(Error::InsufficientNegatives {
            requested: target,
            available,
        });
    }

    let positive_set: HashSet<(u32, u32)> = positive_idx.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut negative_idx: Vec<(u32, u32)> = if target == 0 {
        Vec::new()
    } else if available <= ENUMERATION_LIMIT && available <= 2 * target {
        let mut all = Vec::with_capacity(available);
        for a in 0..m as u32 {
            for b in a + 1..m as u32 {
                if !positive_set.contains(&(a, b)) {
                    all.push((a, b));
                }
            }
        }
        rand::seq::index::sample(&mut rng, all.len(), target)
            .into_iter()
            .map(|i| all[i])
            .collect()
    } else {
        let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(target);
        let mut picked = Vec::with_capacity(target);
        let cap = target.saturating_mul(1000);
        let mut attempts = 0usize;
        while picked.len() < target {
            if attempts == cap {
                return Err(Error::InsufficientNegatives {
                    requested: target,
                    available: picked.len(),
                });
            }
            attempts += 1;
            let a = rng.random_range(0..m) as u32;
            let b = rng.random_range(0..m) as u32;
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if positive_set.contains(&pair) || !chosen.insert(pair) {
                continue;
            }
            picked.push(pair);
        }
        picked
    };
    negative_idx.sort_unstable();

    let to_samples = |idx: &[(u32, u32)], y: bool| -> Vec<PairSample> {
        idx.iter()
            .map(|&(a, b)| PairSample {
                aspect: aspect.clone(),
                doc_a: eligible[a as usize].clone(),
                doc_b: eligible[b as usize].clone(),
                y,
            })
            .collect()
    };
    Ok(GroundTruth {
        aspect: aspect.clone(),
        positives: to_samples(&positive_idx, true),
        negatives: to_samples(&negative_idx, false),
        relevance,
    })
}

/// Test-fold membership of every paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub rng_seed: Option<u64>,
    test_fold: BTreeMap<String, usize>,
}

pub fn make_folds<I, S>(paper_ids: I, n_folds: usize, rng_seed: u64) -> Result<FoldAssignment>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    if n_folds < 2 {
        return Err(Error::invalid("at least 2 folds are required"));
    }
    let mut ids: Vec<String> = paper_ids.into_iter().map(Into::into).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < n_folds {
        return Err(Error::invalid(format!(
            "{} papers cannot be split into {n_folds} folds",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    ids.shuffle(&mut rng);

    let base = ids.len() / n_folds;
    let extra = ids.len() % n_folds;
    let mut test_fold = BTreeMap::new();
    let mut iter = ids.into_iter();
    for fold in 0..n_folds {
        let size = base + usize::from(fold < extra);
        for id in iter.by_ref().take(size) {
            test_fold.insert(id, fold);
        }
    }
    Ok(FoldAssignment {
        n_folds,
        rng_seed: Some(rng_seed),
        test_fold,
    })
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.test_fold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test_fold.is_empty()
    }

    pub fn fold_of(&self, paper_id: &str) -> Option<usize> {
        self.test_fold.get(paper_id).copied()
    }

    pub fn paper_ids(&self) -> impl Iterator<Item = &str> {
        self.test_fold.keys().map(String::as_str)
    }

    pub fn test_ids(&self, fold: usize) -> BTreeSet<&str> {
        self.test_fold
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> BTreeSet<&str> {
        self.test_fold
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Writes `paper_id<TAB>fold` lines sorted by id.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, fold) in &self.test_fold {
            writeln!(out, "{id}\t{fold}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut test_fold = BTreeMap::new();
        for (no, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, fold) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(no + 1, "expected paper_id<TAB>fold"))?;
            let fold: usize = fold
                .trim()
                .parse()
                .map_err(|_| Error::parse(no + 1, "fold index is not an integer"))?;
            if test_fold.insert(id.to_string(), fold).is_some() {
                return Err(Error::DuplicatePaper(id.to_string()));
            }
        }
        let n_folds = test_fold.values().max().map_or(0, |m| m + 1);
        if n_folds < 2 {
            return Err(Error::Format(
                "fold file must describe at least 2 folds".into(),
            ));
        }
        Ok(FoldAssignment {
            n_folds,
            rng_seed: None,
            test_fold,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PairSplit {
    pub train: Vec<PairSample>,
    pub test: Vec<PairSample>,
    /// Pairs whose endpoints fall on different sides of the split.
    pub dropped: usize,
}

/// Splits pairs by endpoint membership; mixed pairs are dropped and counted.
pub fn split_pairs<'a, I>(pairs: I, folds: &FoldAssignment, fold_index: usize) -> Result<PairSplit>
where
    I: IntoIterator<Item = &'a PairSample>,
{
    if fold_index >= folds.n_folds {
        return Err(Error::invalid(format!(
            "fold {fold_index} out of range for {} folds",
            folds.n_folds
        )));
    }
    let mut split = PairSplit::default();
    for pair in pairs {
        let side = |id: &str| folds.fold_of(id).map(|f| f == fold_index);
        match (side(&pair.doc_a), side(&pair.doc_b)) {
            (Some(false), Some(false)) => split.train.push(pair.clone()),
            (Some(true), Some(true)) => split.test.push(pair.clone()),
            _ => split.dropped += 1,
        }
    }
    Ok(split)
}

/// Writes `aspect<TAB>doc_a<TAB>doc_b<TAB>y` lines.
pub fn write_pairs<'a, W, I>(mut out: W, pairs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PairSample>,
{
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.aspect,
            p.doc_a,
            p.doc_b,
            u8::from(p.y)
        )?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<PairSample>> {
    let mut pairs = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                no + 1,
                "expected aspect<TAB>doc_a<TAB>doc_b<TAB>y",
            ));
        }
        let y = match fields[3].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(
                    no + 1,
                    format!("label must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let pair = PairSample::new(AspectId::new(fields[0]), fields[1], fields[2], y)
            .map_err(|e| Error::parse(no + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}
