//! Corpora with planted aspect structure.
//!
//! Every label of every aspect gets a random unit prototype. A paper's text
//! names its labels plus one paper-specific token, and the token table maps
//! each label token to `weight[aspect] * prototype` and the paper token to
//! Gaussian noise. The generic vector of a paper is the average of its token
//! vectors, so skewed weights make the generic space favor one aspect.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{AspectId, Corpus, PaperRecord};
use crate::embedding::{average_token_embeddings, EmbeddingMatrix, TokenVectorTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub dim: usize,
    pub aspects: Vec<AspectId>,
    /// Weight of each aspect in the generic vector.
    pub weights: Vec<f64>,
    pub labels_per_aspect: usize,
    /// Norm of the paper-specific noise token relative to a unit prototype.
    pub noise: f64,
    /// Probability that a paper carries a second label in an aspect.
    pub second_label: f64,
    /// Probability that a paper has no label in an aspect.
    pub unlabeled: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            docs: 1000,
            dim: 64,
            aspects: AspectId::defaults(),
            weights: vec![0.45, 0.33, 0.22],
            labels_per_aspect: 20,
            noise: 0.8,
            second_label: 0.05,
            unlabeled: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub tokens: TokenVectorTable,
    /// Average-token vectors of every paper.
    pub generic: EmbeddingMatrix,
}

pub fn label_name(aspect: &AspectId, index: usize) -> String {
    format!("{aspect}{index:02}")
}

pub fn paper_id(index: usize) -> String {
    format!("p{index:05}")
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.docs < 2 || config.dim == 0 || config.labels_per_aspect == 0 {
        return Err(Error::invalid(
            "synthetic corpus needs docs >= 2, dim >= 1 and labels >= 1",
        ));
    }
    if config.weights.len() != config.aspects.len() {
        return Err(Error::invalid("one weight per aspect is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = TokenVectorTable::new(config.dim)?;
    let mut names: Vec<Vec<String>> = Vec::new();
    for (aspect, &weight) in config.aspects.iter().zip(&config.weights) {
        let mut aspect_names = Vec::new();
        for l in 0..config.labels_per_aspect {
            let proto = gaussian_unit(&mut rng, config.dim);
            let name = label_name(aspect, l);
            tokens.insert(&name, proto.iter().map(|x| (weight * x) as f32).collect())?;
            aspect_names.push(name);
        }
        names.push(aspect_names);
    }

    let mut records = Vec::with_capacity(config.docs);
    for i in 0..config.docs {
        let id = paper_id(i);
        let mut labels = BTreeMap::new();
        let mut phrases = Vec::new();
        for (aspect, aspect_names) in config.aspects.iter().zip(&names) {
            let mut set = BTreeSet::new();
            if !rng.random_bool(config.unlabeled) {
                set.insert(aspect_names.choose(&mut rng).expect("labels").clone());
                if rng.random_bool(config.second_label) {
                    set.insert(aspect_names.choose(&mut rng).expect("labels").clone());
                }
            }
            phrases.push(format!(
                "{aspect} {}",
                set.iter().cloned().collect::<Vec<_>>().join(" ")
            ));
            labels.insert(aspect.clone(), set);
        }
        let doc_token = format!("doc{i:05}");
        let noise = gaussian_unit(&mut rng, config.dim);
        tokens.insert(
            &doc_token,
            noise.iter().map(|x| (config.noise * x) as f32).collect(),
        )?;
        records.push(PaperRecord {
            paper_id: id,
            title: format!("Synthetic paper {i}"),
            abstract_text: format!("Labels: {}. Marker {doc_token}.", phrases.join("; ")),
            labels,
        });
    }
    let corpus = Corpus::from_records(records, &config.aspects)?;
    let pooled = average_token_embeddings(&corpus, &tokens)?;
    if !pooled.omitted.is_empty() {
        return Err(Error::invalid(
            "synthetic corpus produced papers without vectors",
        ));
    }
    Ok(SyntheticCorpus {
        corpus,
        tokens,
        generic: pooled.matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let config = SyntheticConfig {
            docs: 50,
            dim: 8,
            labels_per_aspect: 4,
            ..Default::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.corpus.papers(), b.corpus.papers());
        assert_eq!(a.generic.as_slice(), b.generic.as_slice());
        assert_eq!(a.generic.len(), 50);
        let c = generate(&SyntheticConfig { seed: 1, ..config }).unwrap();
        assert_ne!(a.generic.as_slice(), c.generic.as_slice());
    }

    #[test]
    fn aspect_tokens_are_not_pooled_twice() {
        // Aspect names in the text are out of vocabulary, label tokens are not.
        let config = SyntheticConfig {
            docs: 3,
            dim: 4,
            labels_per_aspect: 2,
            ..Default::default()
        };
        let s = generate(&config).unwrap();
        assert!(s.tokens.get("task").is_none());
        assert!(s.tokens.get("task01").is_some());
    }
}
