//! In-memory view of a finished run: corpus, generic index and one index per
//! aspect space, plus the queries the HTTP layer exposes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use aspectsim::corpus::ingest_path;
use aspectsim::embedding::load_embeddings;
use aspectsim::retrieval::{build_index, Query};
use aspectsim::{AspectId, Corpus, PaperRecord, RetrievalResult, SimilarityIndex};
use serde::Serialize;

use crate::pipeline::load_serve_plan;
use crate::PipelineError;

pub const MAX_K: usize = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServeError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
}

pub struct AspectSpace {
    pub default: String,
    /// Index per method tag.
    pub indexes: BTreeMap<String, SimilarityIndex>,
}

pub struct Snapshot {
    corpus: Corpus,
    generic: SimilarityIndex,
    aspects: Vec<(AspectId, AspectSpace)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperView {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub labels: BTreeMap<AspectId, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperSummary {
    pub paper_id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarItem {
    pub rank: usize,
    pub paper_id: String,
    pub title: String,
    pub score: f64,
    /// Labels shared with the seed, per aspect; aspects without a shared
    /// label are left out.
    pub shared_labels: BTreeMap<AspectId, Vec<String>>,
    /// Other bundle columns that also list this paper.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub also_in: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarResponse {
    pub seed: PaperSummary,
    /// `None` for the generic space.
    pub aspect: Option<AspectId>,
    pub method: String,
    pub k: usize,
    pub items: Vec<SimilarItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleColumn {
    /// `generic` or the aspect name.
    pub column: String,
    pub method: String,
    pub items: Vec<SimilarItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleResponse {
    pub seed: PaperSummary,
    pub k: usize,
    pub columns: Vec<BundleColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectInfo {
    pub aspect: AspectId,
    pub default_method: String,
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectsResponse {
    pub generic_method: String,
    pub aspects: Vec<AspectInfo>,
}

pub const GENERIC_COLUMN: &str = "generic";

impl Snapshot {
    pub fn new(
        corpus: Corpus,
        generic: SimilarityIndex,
        aspects: Vec<(AspectId, AspectSpace)>,
    ) -> Result<Self, PipelineError> {
        for (aspect, space) in &aspects {
            if !space.indexes.contains_key(&space.default) {
                return Err(PipelineError::Snapshot(format!(
                    "default method `{}` of aspect `{aspect}` has no index",
                    space.default
                )));
            }
        }
        Ok(Snapshot {
            corpus,
            generic,
            aspects,
        })
    }

    /// Loads the serving plan written by the last pipeline stage.
    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        let plan = load_serve_plan(run_dir)?;
        let aspects: Vec<AspectId> = plan.aspects.iter().map(|a| a.aspect.clone()).collect();
        let corpus = ingest_path(run_dir.join(&plan.corpus), &aspects)?;
        let index = |method: &str, rel: &str| -> Result<SimilarityIndex, PipelineError> {
            let (m, _) = load_embeddings(run_dir.join(rel), method, None)?;
            Ok(build_index(&m)?)
        };
        let generic = index(&plan.generic.method, &plan.generic.vectors)?;
        let mut spaces = Vec::new();
        for entry in &plan.aspects {
            let mut indexes = BTreeMap::new();
            for space in &entry.spaces {
                indexes.insert(space.method.clone(), index(&space.method, &space.vectors)?);
            }
            spaces.push((
                entry.aspect.clone(),
                AspectSpace {
                    default: entry.default.clone(),
                    indexes,
                },
            ));
        }
        Snapshot::new(corpus, generic, spaces)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn aspects(&self) -> AspectsResponse {
        AspectsResponse {
            generic_method: self.generic.method_tag().to_string(),
            aspects: self
                .aspects
                .iter()
                .map(|(aspect, space)| AspectInfo {
                    aspect: aspect.clone(),
                    default_method: space.default.clone(),
                    methods: space.indexes.keys().cloned().collect(),
                })
                .collect(),
        }
    }

    fn record(&self, id: &str) -> Result<&PaperRecord, ServeError> {
        self.corpus
            .get(id)
            .ok_or_else(|| ServeError::NotFound(format!("unknown paper `{id}`")))
    }

    pub fn paper(&self, id: &str) -> Result<PaperView, ServeError> {
        let p = self.record(id)?;
        Ok(PaperView {
            paper_id: p.paper_id.clone(),
            title: p.title.clone(),
            abstract_text: p.abstract_text.clone(),
            labels: p
                .labels
                .iter()
                .map(|(a, l)| (a.clone(), l.iter().cloned().collect()))
                .collect(),
        })
    }

    /// Case-insensitive substring search over ids and titles, in corpus order.
    pub fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperSummary>, ServeError> {
        let needle = query.trim().to_lowercase();
        if needle.is_empty() {
            return Err(ServeError::BadRequest("query must not be empty".into()));
        }
        Ok(self
            .corpus
            .papers()
            .iter()
            .filter(|p| {
                p.paper_id.to_lowercase().contains(&needle)
                    || p.title.to_lowercase().contains(&needle)
            })
            .take(limit)
            .map(summary)
            .collect())
    }

    /// Resolves the index for an aspect (or the generic space). `method`
    /// is a full tag or just the loss name.
    fn space(
        &self,
        aspect: Option<&str>,
        method: Option<&str>,
    ) -> Result<(Option<AspectId>, &SimilarityIndex), ServeError> {
        let Some(aspect) = aspect else {
            if let Some(m) = method.filter(|m| *m != self.generic.method_tag()) {
                return Err(ServeError::BadRequest(format!(
                    "unknown method `{m}` for the generic space"
                )));
            }
            return Ok((None, &self.generic));
        };
        if aspect == GENERIC_COLUMN {
            return self.space(None, method);
        }
        let id = AspectId::new(aspect);
        let space = self
            .aspects
            .iter()
            .find(|(a, _)| *a == id)
            .map(|(_, s)| s)
            .ok_or_else(|| ServeError::BadRequest(format!("unknown aspect `{aspect}`")))?;
        let method = method.unwrap_or(&space.default);
        let index = space
            .indexes
            .get(method)
            .or_else(|| {
                space
                    .indexes
                    .get(&format!("{}+{method}", self.generic.method_tag()))
            })
            .ok_or_else(|| {
                ServeError::BadRequest(format!("unknown method `{method}` for aspect `{aspect}`"))
            })?;
        Ok((Some(id), index))
    }

    fn neighbors(
        &self,
        index: &SimilarityIndex,
        id: &str,
        k: usize,
    ) -> Result<RetrievalResult, ServeError> {
        if !index.contains(id) {
            return Err(ServeError::NotFound(format!(
                "paper `{id}` has no vector in `{}`",
                index.method_tag()
            )));
        }
        index
            .knn(Query::Id(id), k)
            .map_err(|e| ServeError::BadRequest(e.to_string()))
    }

    fn items(&self, seed: &PaperRecord, result: &RetrievalResult) -> Vec<SimilarItem> {
        result
            .hits
            .iter()
            .enumerate()
            .map(|(i, hit)| {
                let candidate = self.corpus.get(&hit.id);
                SimilarItem {
                    rank: i + 1,
                    paper_id: hit.id.clone(),
                    title: candidate.map(|c| c.title.clone()).unwrap_or_default(),
                    score: hit.score,
                    shared_labels: candidate
                        .map(|c| shared_labels(seed, c))
                        .unwrap_or_default(),
                    also_in: None,
                }
            })
            .collect()
    }

    pub fn similar(
        &self,
        id: &str,
        aspect: Option<&str>,
        method: Option<&str>,
        k: usize,
    ) -> Result<SimilarResponse, ServeError> {
        check_k(k)?;
        let seed = self.record(id)?;
        let (aspect, index) = self.space(aspect, method)?;
        let result = self.neighbors(index, id, k)?;
        Ok(SimilarResponse {
            seed: summary(seed),
            aspect,
            method: index.method_tag().to_string(),
            k,
            items: self.items(seed, &result),
        })
    }

    /// Generic neighbors next to each aspect's default space. Items listed by
    /// more than one column name the other columns in `also_in`.
    pub fn bundle(&self, id: &str, k: usize) -> Result<BundleResponse, ServeError> {
        check_k(k)?;
        let seed = self.record(id)?;
        let mut columns = vec![(GENERIC_COLUMN.to_string(), &self.generic)];
        for (aspect, space) in &self.aspects {
            columns.push((aspect.to_string(), &space.indexes[&space.default]));
        }
        let mut built = Vec::new();
        for (name, index) in columns {
            let result = self.neighbors(index, id, k)?;
            built.push(BundleColumn {
                column: name,
                method: index.method_tag().to_string(),
                items: self.items(seed, &result),
            });
        }
        let members: Vec<BTreeSet<String>> = built
            .iter()
            .map(|c| c.items.iter().map(|i| i.paper_id.clone()).collect())
            .collect();
        let names: Vec<String> = built.iter().map(|c| c.column.clone()).collect();
        for (ci, column) in built.iter_mut().enumerate() {
            for item in &mut column.items {
                let others = members
                    .iter()
                    .enumerate()
                    .filter(|(cj, set)| *cj != ci && set.contains(&item.paper_id))
                    .map(|(cj, _)| names[cj].clone())
                    .collect();
                item.also_in = Some(others);
            }
        }
        Ok(BundleResponse {
            seed: summary(seed),
            k,
            columns: built,
        })
    }
}

fn check_k(k: usize) -> Result<(), ServeError> {
    if (1..=MAX_K).contains(&k) {
        Ok(())
    } else {
        Err(ServeError::BadRequest(format!(
            "k must be between 1 and {MAX_K}"
        )))
    }
}

fn summary(p: &PaperRecord) -> PaperSummary {
    PaperSummary {
        paper_id: p.paper_id.clone(),
        title: p.title.clone(),
    }
}

fn shared_labels(a: &PaperRecord, b: &PaperRecord) -> BTreeMap<AspectId, Vec<String>> {
    a.labels
        .iter()
        .filter_map(|(aspect, la)| {
            let lb = b.labels_for(aspect)?;
            let shared: Vec<String> = la.intersection(lb).cloned().collect();
            (!shared.is_empty()).then(|| (aspect.clone(), shared))
        })
        .collect()
}
