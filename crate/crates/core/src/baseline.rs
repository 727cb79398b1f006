//! Pairwise classification baseline.
//!
//! A pair of papers is scored by a logistic head per aspect over the pair
//! feature `[u ; v ; |u - v| ; u * v]`. Scoring every pair in a corpus is
//! quadratic, so candidates for a seed are first narrowed to its `n` nearest
//! generic neighbors and then re-ranked by predicted probability.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AspectId;
use crate::embedding::{read_f32s, write_f32s};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_method, MetricsRow};
use crate::ground_truth::{PairSample, RelevanceIndex};
use crate::optim::Adam;
use crate::retrieval::{Hit, Query, RetrievalResult, SimilarityIndex};

pub const DEFAULT_FILTER_N: usize = 300;
pub const PAIRWISE_MAGIC: &[u8; 4] = b"APWM";
const PAIRWISE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairwiseHeader {
    format_version: u32,
    aspects: Vec<AspectId>,
    feature_dim: usize,
    mode: HeadMode,
    config: PairwiseConfig,
}

fn head_count(mode: HeadMode, aspects: usize) -> usize {
    match mode {
        HeadMode::MultiLabel => aspects,
        HeadMode::Softmax => aspects + 1,
    }
}

/// `[u ; v ; |u - v| ; u ⊙ v]`, length `4 * dim`.
pub fn pair_feature(u: &[f32], v: &[f32]) -> Vec<f64> {
    debug_assert_eq!(u.len(), v.len());
    let (u, v): (Vec<f64>, Vec<f64>) = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| (f64::from(a), f64::from(b)))
        .unzip();
    let mut f = Vec::with_capacity(4 * u.len());
    f.extend_from_slice(&u);
    f.extend_from_slice(&v);
    f.extend(u.iter().zip(&v).map(|(a, b)| (a - b).abs()));
    f.extend(u.iter().zip(&v).map(|(a, b)| a * b));
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Independent sigmoid per aspect.
    MultiLabel,
    /// Softmax over the aspects plus a "no aspect" class.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseConfig {
    pub mode: HeadMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig {
            mode: HeadMode::MultiLabel,
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            threshold: 0.5,
        }
    }
}

/// Anything that turns a pair of vectors into per-aspect probabilities.
pub trait PairScorer: Sync {
    fn aspects(&self) -> &[AspectId];

    fn score_pair(&self, u: &[f32], v: &[f32]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub aspects: Vec<AspectId>,
    pub feature_dim: usize,
    pub mode: HeadMode,
    /// Row-major `heads x feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: PairwiseConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairwiseReport {
    pub loss_trace: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub examples: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl PairwiseModel {
    fn heads(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        (0..self.heads())
            .map(|h| {
                let w = &self.weights[h * d..(h + 1) * d];
                self.bias[h] + w.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Probability per head; for softmax the last head is "no aspect".
    fn head_probabilities(&self, feature: &[f64]) -> Vec<f64> {
        let z = self.logits(feature);
        match self.mode {
            HeadMode::MultiLabel => z.into_iter().map(sigmoid).collect(),
            HeadMode::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = e.iter().sum();
                e.into_iter().map(|v| v / sum).collect()
            }
        }
    }

    /// Probability that the pair is similar, per aspect.
    pub fn predict(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.feature_dim {
            return Err(Error::invalid(format!(
                "feature has length {}, model expects {}",
                feature.len(),
                self.feature_dim
            )));
        }
        let mut p = self.head_probabilities(feature);
        p.truncate(self.aspects.len());
        Ok(p)
    }

    pub fn decide(&self, feature: &[f64]) -> Result<Vec<bool>> {
        Ok(self
            .predict(feature)?
            .into_iter()
            .map(|p| p >= self.config.threshold)
            .collect())
    }

    pub fn aspect_index(&self, aspect: &AspectId) -> Result<usize> {
        self.aspects
            .iter()
            .position(|a| a == aspect)
            .ok_or_else(|| Error::UnknownAspect(aspect.to_string()))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = PairwiseHeader {
            format_version: PAIRWISE_VERSION,
            aspects: self.aspects.clone(),
            feature_dim: self.feature_dim,
            mode: self.mode,
            config: self.config.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
        out.write_all(PAIRWISE_MAGIC)?;
        out.write_all(&PAIRWISE_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let params: Vec<f32> = self
            .weights
            .iter()
            .chain(&self.bias)
            .map(|&p| p as f32)
            .collect();
        write_f32s(&mut out, &params)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        if &word != PAIRWISE_MAGIC {
            return Err(Error::Format("not a pairwise model file".into()));
        }
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != PAIRWISE_VERSION {
            return Err(Error::Format(format!(
                "unsupported pairwise model version {version}"
            )));
        }
        input.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        input.read_exact(&mut header)?;
        let header: PairwiseHeader = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("pairwise model header: {e}")))?;
        if header.aspects.is_empty() || header.feature_dim == 0 {
            return Err(Error::Format(
                "pairwise model without aspects or features".into(),
            ));
        }
        let heads = head_count(header.mode, header.aspects.len());
        let mut params = vec![0f32; heads * header.feature_dim + heads];
        read_f32s(&mut input, &mut params)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        let mut weights: Vec<f64> = params.into_iter().map(f64::from).collect();
        let bias = weights.split_off(heads * header.feature_dim);
        Ok(PairwiseModel {
            aspects: header.aspects,
            feature_dim: header.feature_dim,
            mode: header.mode,
            weights,
            bias,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    fn loss(&self, feature: &[f64], gold: &[bool], grad_logits: Option<&mut Vec<f64>>) -> f64 {
        let p = self.head_probabilities(feature);
        let target = targets(self.mode, gold);
        let eps = 1e-12;
        let loss = match self.mode {
            HeadMode::MultiLabel => p
                .iter()
                .zip(&target)
                .map(|(p, t)| -(t * (p + eps).ln() + (1.0 - t) * (1.0 - p + eps).ln()))
                .sum(),
            HeadMode::Softmax => p
                .iter()
                .zip(&target)
                .map(|(p, t)| -t * (p + eps).ln())
                .sum(),
        };
        if let Some(g) = grad_logits {
            g.clear();
            g.extend(p.iter().zip(&target).map(|(p, t)| p - t));
        }
        loss
    }

    pub fn mean_loss(&self, features: &[Vec<f64>], gold: &[Vec<bool>]) -> f64 {
        let total: f64 = features
            .iter()
            .zip(gold)
            .map(|(f, g)| self.loss(f, g, None))
            .sum();
        total / features.len() as f64
    }
}

fn targets(mode: HeadMode, gold: &[bool]) -> Vec<f64> {
    match mode {
        HeadMode::MultiLabel => gold.iter().map(|&g| f64::from(u8::from(g))).collect(),
        HeadMode::Softmax => {
            let positives = gold.iter().filter(|&&g| g).count();
            let mut t: Vec<f64> = gold
                .iter()
                .map(|&g| if g { 1.0 / positives as f64 } else { 0.0 })
                .collect();
            t.push(if positives == 0 { 1.0 } else { 0.0 });
            t
        }
    }
}

impl PairScorer for PairwiseModel {
    fn aspects(&self) -> &[AspectId] {
        &self.aspects
    }

    fn score_pair(&self, u: &[f32], v: &[f32]) -> Vec<f64> {
        let mut p = self.head_probabilities(&pair_feature(u, v));
        p.truncate(self.aspects.len());
        p
    }
}

/// Fits the heads by mini-batch Adam on binary cross-entropy (or softmax
/// cross-entropy in [`HeadMode::Softmax`]).
pub fn train_pairwise(
    features: &[Vec<f64>],
    gold: &[Vec<bool>],
    aspects: &[AspectId],
    config: &PairwiseConfig,
) -> Result<(PairwiseModel, PairwiseReport)> {
    if features.is_empty() || features.len() != gold.len() {
        return Err(Error::invalid(
            "need one gold vector per non-empty feature set",
        ));
    }
    if aspects.is_empty() || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid(
            "aspects, batch size and epochs must be non-empty",
        ));
    }
    let dim = features[0].len();
    if dim == 0
        || features.iter().any(|f| f.len() != dim)
        || gold.iter().any(|g| g.len() != aspects.len())
    {
        return Err(Error::invalid("inconsistent feature or label lengths"));
    }
    for (i, aspect) in aspects.iter().enumerate() {
        let positives = gold.iter().filter(|g| g[i]).count();
        if positives == 0 || positives == gold.len() {
            return Err(Error::invalid(format!(
                "aspect `{aspect}` needs both positive and negative pairs"
            )));
        }
    }
    let heads = head_count(config.mode, aspects.len());
    let mut model = PairwiseModel {
        aspects: aspects.to_vec(),
        feature_dim: dim,
        mode: config.mode,
        weights: vec![0.0; heads * dim],
        bias: vec![0.0; heads],
        config: config.clone(),
    };
    let initial_loss = model.mean_loss(features, gold);

    let n_params = heads * dim + heads;
    let mut params = vec![0.0; n_params];
    let mut adam = Adam::new(n_params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut grads = vec![0.0; n_params];
    let mut grad_logits = Vec::with_capacity(heads);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += model.loss(&features[i], &gold[i], Some(&mut grad_logits));
                for (h, gz) in grad_logits.iter().enumerate() {
                    let row = &mut grads[h * dim..(h + 1) * dim];
                    row.iter_mut()
                        .zip(&features[i])
                        .for_each(|(g, x)| *g += scale * gz * x);
                    grads[heads * dim + h] += scale * gz;
                }
            }
            adam.update(&mut params, &grads);
            model.weights.copy_from_slice(&params[..heads * dim]);
            model.bias.copy_from_slice(&params[heads * dim..]);
        }
        loss_trace.push(total / features.len() as f64);
    }
    // Stored weights are f32; round now so a saved model predicts identically.
    for p in model.weights.iter_mut().chain(model.bias.iter_mut()) {
        *p = f64::from(*p as f32);
    }
    let final_loss = model.mean_loss(features, gold);
    Ok((
        model,
        PairwiseReport {
            loss_trace,
            initial_loss,
            final_loss,
            examples: features.len(),
        },
    ))
}

/// Labeled training examples built from pairs of several aspects.
#[derive(Debug, Clone, Default)]
pub struct PairDataset {
    pub keys: Vec<(String, String)>,
    pub features: Vec<Vec<f64>>,
    pub gold: Vec<Vec<bool>>,
}

/// Collects the distinct pairs over all `pairs`, labels each pair for every
/// aspect with the relevance indexes, and builds features from the index
/// vectors. With `both_orders` each pair contributes `(u, v)` and `(v, u)`.
pub fn build_pair_dataset<'a, I>(
    pairs: I,
    relevance: &[&RelevanceIndex],
    vectors: &SimilarityIndex,
    both_orders: bool,
) -> PairDataset
where
    I: IntoIterator<Item = &'a PairSample>,
{
    let keys: BTreeSet<(&str, &str)> = pairs
        .into_iter()
        .filter(|p| vectors.contains(&p.doc_a) && vectors.contains(&p.doc_b))
        .map(|p| (p.doc_a.as_str(), p.doc_b.as_str()))
        .collect();
    let mut data = PairDataset::default();
    for (a, b) in keys {
        let gold: Vec<bool> = relevance.iter().map(|r| r.is_relevant(a, b)).collect();
        let (u, v) = (
            vectors.vector(a).expect("checked"),
            vectors.vector(b).expect("checked"),
        );
        data.keys.push((a.to_string(), b.to_string()));
        data.features.push(pair_feature(u, v));
        data.gold.push(gold.clone());
        if both_orders {
            data.keys.push((b.to_string(), a.to_string()));
            data.features.push(pair_feature(v, u));
            data.gold.push(gold);
        }
    }
    data
}

/// The `n` nearest generic neighbors of `seed`.
pub fn candidate_filter(seed: &str, generic: &SimilarityIndex, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::invalid("filter size must be at least 1"));
    }
    Ok(generic
        .knn(Query::Id(seed), n)?
        .hits
        .into_iter()
        .map(|h| h.id)
        .collect())
}

/// Re-ranks candidates by predicted probability for `aspect`, paper id as
/// tie-break. `vectors` supplies the vectors the scorer sees.
pub fn rank_by_probability<S: PairScorer + ?Sized>(
    scorer: &S,
    vectors: &SimilarityIndex,
    seed: &str,
    candidates: &[String],
    aspect: &AspectId,
    k: usize,
) -> Result<RetrievalResult> {
    let head = scorer
        .aspects()
        .iter()
        .position(|a| a == aspect)
        .ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
    let u = vectors
        .vector(seed)
        .ok_or_else(|| Error::UnknownPaper(seed.to_string()))?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = vectors
            .vector(c)
            .ok_or_else(|| Error::UnknownPaper(c.clone()))?;
        scored.push(Hit {
            id: c.clone(),
            score: scorer.score_pair(u, v)[head],
        });
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(k);
    Ok(RetrievalResult {
        seed_id: Some(seed.to_string()),
        hits: scored,
        k,
        method_tag: "pairwise".into(),
        aspect_tag: Some(aspect.clone()),
    })
}

/// Baseline rankings for many seeds at one filter size.
pub fn rank_seeds<S: PairScorer + ?Sized>(
    scorer: &S,
    generic: &SimilarityIndex,
    seeds: &[&str],
    aspect: &AspectId,
    n: usize,
    k: usize,
) -> Result<BTreeMap<String, RetrievalResult>> {
    let ranked: Vec<RetrievalResult> = seeds
        .par_iter()
        .map(|seed| {
            let candidates = candidate_filter(seed, generic, n)?;
            rank_by_probability(scorer, generic, seed, &candidates, aspect, k)
        })
        .collect::<Result<_>>()?;
    Ok(seeds.iter().map(|s| s.to_string()).zip(ranked).collect())
}

/// MAP@k (and the other metrics) of the baseline for each filter size.
pub fn filter_size_sweep<S: PairScorer + ?Sized>(
    scorer: &S,
    seeds: &[&str],
    generic: &SimilarityIndex,
    relevance: &RelevanceIndex,
    ns: &[usize],
    k: usize,
    fold: usize,
) -> Result<Vec<(usize, MetricsRow)>> {
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n >= generic.len()) {
        return Err(Error::invalid(format!(
            "filter size {n} must be in 1..{}",
            generic.len()
        )));
    }
    ns.iter()
        .map(|&n| {
            let results = rank_seeds(scorer, generic, seeds, relevance.aspect(), n, k)?;
            let mut row = evaluate_method(&results, relevance, k, fold)?;
            row.method = format!("pairwise(n={n})");
            Ok((n, row))
        })
        .collect()
}
