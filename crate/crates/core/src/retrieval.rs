//! Exact cosine k-nearest-neighbor search.
//!
//! Rows are normalized once at build time; a query scores every row with an
//! f64-accumulated dot product and keeps the best `k` in a bounded heap.
//! Ranking is by descending score with ascending paper id as tie-break, so
//! results are fully deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::AspectId;
use crate::embedding::{l2_normalize, norm, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    method_tag: String,
    aspect_tag: Option<AspectId>,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
    /// Position of each row's id in ascending id order.
    id_rank: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Id(&'a str),
    Vector(&'a [f32]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    /// `None` for raw-vector queries.
    pub seed_id: Option<String>,
    pub hits: Vec<Hit>,
    pub k: usize,
    pub method_tag: String,
    pub aspect_tag: Option<AspectId>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }

    /// Copy restricted to the first `k` hits.
    pub fn truncated(&self, k: usize) -> RetrievalResult {
        RetrievalResult {
            hits: self.hits.iter().take(k).cloned().collect(),
            k,
            ..self.clone()
        }
    }
}

pub fn build_index(m: &EmbeddingMatrix) -> Result<SimilarityIndex> {
    let normalized = l2_normalize(m)?;
    let ids = normalized.ids().to_vec();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut id_rank = vec![0u32; ids.len()];
    for (rank, &pos) in order.iter().enumerate() {
        id_rank[pos] = rank as u32;
    }
    let positions = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    Ok(SimilarityIndex {
        method_tag: m.method_tag().to_string(),
        aspect_tag: m.aspect_tag().cloned(),
        dim: m.dim(),
        ids,
        data: normalized.as_slice().to_vec(),
        positions,
        id_rank,
    })
}

/// Similarity of two normalized rows.
pub fn unit_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Clone, Copy)]
struct Scored {
    score: f64,
    rank: u32,
    pos: usize,
}

impl Scored {
    /// `Less` means `self` ranks before `other`.
    fn ranking(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.rank.cmp(&other.rank))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.ranking(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// max-heap top is the worst retained candidate
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ranking(other)
    }
}

impl SimilarityIndex {
    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    pub fn aspect_tag(&self) -> Option<&AspectId> {
        self.aspect_tag.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Normalized row for an id.
    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn query_vector<'a>(
        &'a self,
        query: Query<'a>,
    ) -> Result<(Option<usize>, std::borrow::Cow<'a, [f32]>)> {
        match query {
            Query::Id(id) => {
                let pos = *self
                    .positions
                    .get(id)
                    .ok_or_else(|| Error::UnknownPaper(id.to_string()))?;
                Ok((Some(pos), self.row(pos).into()))
            }
            Query::Vector(v) => {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        id: "<query>".into(),
                        expected: self.dim,
                        found: v.len(),
                    });
                }
                let n = norm(v);
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::ZeroVector("<query>".into()));
                }
                Ok((
                    None,
                    v.iter()
                        .map(|&x| (f64::from(x) / n) as f32)
                        .collect::<Vec<_>>()
                        .into(),
                ))
            }
        }
    }

    /// Top-`k` rows by cosine; an id query never returns the seed itself.
    pub fn knn(&self, query: Query<'_>, k: usize) -> Result<RetrievalResult> {
        self.knn_excluding(query, k, &HashSet::new())
    }

    pub fn knn_excluding(
        &self,
        query: Query<'_>,
        k: usize,
        exclude: &HashSet<&str>,
    ) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let (seed_pos, q) = self.query_vector(query)?;
        let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
        for (pos, row) in self.data.chunks_exact(self.dim).enumerate() {
            if Some(pos) == seed_pos
                || (!exclude.is_empty() && exclude.contains(self.ids[pos].as_str()))
            {
                continue;
            }
            let cand = Scored {
                score: unit_dot(&q, row),
                rank: self.id_rank[pos],
                pos,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty heap") {
                heap.pop();
                heap.push(cand);
            }
        }
        let hits = heap
            .into_sorted_vec()
            .into_iter()
            .map(|s| Hit {
                id: self.ids[s.pos].clone(),
                score: s.score.clamp(-1.0, 1.0),
            })
            .collect();
        Ok(RetrievalResult {
            seed_id: seed_pos.map(|p| self.ids[p].clone()),
            hits,
            k,
            method_tag: self.method_tag.clone(),
            aspect_tag: self.aspect_tag.clone(),
        })
    }

    /// k-NN for many seeds. Unknown seeds are reported together.
    pub fn batch_knn<'a, I>(&self, seeds: I, k: usize) -> Result<BTreeMap<String, RetrievalResult>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seeds: Vec<&str> = seeds.into_iter().collect();
        seeds.sort_unstable();
        seeds.dedup();
        let unknown: Vec<&str> = seeds
            .iter()
            .copied()
            .filter(|s| !self.contains(s))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownPaper(unknown.join(", ")));
        }
        let results: Vec<RetrievalResult> = seeds
            .par_iter()
            .map(|s| self.knn(Query::Id(s), k))
            .collect::<Result<_>>()?;
        Ok(seeds.iter().map(|s| s.to_string()).zip(results).collect())
    }
}

/// Writes `seed<TAB>rank<TAB>candidate<TAB>score` lines, ranks from 1.
pub fn write_results<'a, W, I>(mut out: W, results: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RetrievalResult>,
{
    for result in results {
        let seed = result.seed_id.as_deref().unwrap_or("<query>");
        for (rank, hit) in result.hits.iter().enumerate() {
            writeln!(out, "{seed}\t{}\t{}\t{:.6}", rank + 1, hit.id, hit.score)?;
        }
    }
    Ok(())
}

/// Reads a results file back. `k` is the retrieval depth the file was
/// produced with; it is recorded on every result.
pub fn read_results<R: BufRead>(
    input: R,
    method_tag: &str,
    aspect_tag: Option<AspectId>,
    k: usize,
) -> Result<BTreeMap<String, RetrievalResult>> {
    let mut results: BTreeMap<String, RetrievalResult> = BTreeMap::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                no + 1,
                "expected seed<TAB>rank<TAB>candidate<TAB>score",
            ));
        }
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(no + 1, "rank is not an integer"))?;
        let score: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(no + 1, "score is not a number"))?;
        let entry = results
            .entry(fields[0].to_string())
            .or_insert_with(|| RetrievalResult {
                seed_id: Some(fields[0].to_string()),
                hits: Vec::new(),
                k,
                method_tag: method_tag.to_string(),
                aspect_tag: aspect_tag.clone(),
            });
        if rank != entry.hits.len() + 1 {
            return Err(Error::parse(
                no + 1,
                format!("expected rank {}", entry.hits.len() + 1),
            ));
        }
        entry.hits.push(Hit {
            id: fields[2].to_string(),
            score,
        });
    }
    Ok(results)
}
