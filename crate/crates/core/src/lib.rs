//! Aspect-based document similarity.
//!
//! A generic embedding assigns one vector to every paper and therefore one
//! notion of similarity. This crate derives an additional vector space per
//! aspect (`task`, `method`, `dataset`) by training a small mapping on pair
//! constraints, and provides everything around it: corpus ingestion, pair and
//! fold construction, exact cosine k-NN, retrieval metrics, a pairwise
//! classification baseline and ranking-overlap analysis.
//!
//! The modules map onto pipeline stages:
//!
//! - [`corpus`]: labeled paper records and per-aspect label vocabularies.
//! - [`ground_truth`]: positive/negative pairs and cross-validation folds.
//! - [`embedding`]: dense vector matrices, file formats, average-token pooling.
//! - [`specializer`]: contrastive and multiple-negatives ranking objectives.
//! - [`retrieval`]: exact cosine nearest neighbor search.
//! - [`evaluation`]: P/R/MRR/MAP at k, classification reports, overlap.
//! - [`baseline`]: pairwise classifier with candidate filtering.
//! - [`synthetic`]: generator for corpora with planted aspect structure.

pub mod baseline;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod ground_truth;
pub mod retrieval;
pub mod specializer;
pub mod synthetic;

mod optim;

pub use corpus::{AspectId, Corpus, LabelVocabulary, PaperRecord};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use ground_truth::{FoldAssignment, GroundTruth, PairSample};
pub use retrieval::{RetrievalResult, SimilarityIndex};
pub use specializer::{LossKind, SpecializerModel};

/// Default aspect set.
pub const DEFAULT_ASPECTS: [&str; 3] = ["task", "method", "dataset"];
