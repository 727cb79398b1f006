//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use aspectsim::baseline::PairwiseConfig;
use aspectsim::corpus::DEFAULT_MAX_LABEL_SIZE;
use aspectsim::specializer::SpecializerConfig;
use aspectsim::{AspectId, LossKind};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

/// Where generic vectors come from: pooled from word vectors, or read from a
/// precomputed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSource {
    /// Method tag of the generic space, e.g. `avg-token` or `specter`.
    pub method: String,
    /// Word vectors for average-token pooling.
    pub tokens: Option<PathBuf>,
    /// Precomputed document vectors (text or AEMB binary).
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub enabled: bool,
    /// Candidate filter size used for the evaluated rankings.
    pub filter_n: usize,
    /// Filter sizes of the sweep.
    pub sweep_ns: Vec<usize>,
    pub pairwise: PairwiseConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            enabled: false,
            filter_n: aspectsim::baseline::DEFAULT_FILTER_N,
            sweep_ns: vec![10, 50, 100, 200, 300],
            pairwise: PairwiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub aspects: Vec<AspectId>,
    /// Line-delimited JSON paper records.
    pub corpus: PathBuf,
    pub generic: GenericSource,
    pub max_label_size: usize,
    pub neg_ratio: f64,
    pub folds: usize,
    /// Folds used as test folds; all folds when absent.
    pub eval_folds: Option<Vec<usize>>,
    pub losses: Vec<LossKind>,
    pub specializer: SpecializerConfig,
    /// Cut-offs reported in the metrics file.
    pub ks: Vec<usize>,
    /// Cut-off of the text table.
    pub table_k: usize,
    pub overlap_k: usize,
    pub baseline: BaselineSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            aspects: AspectId::defaults(),
            corpus: PathBuf::from("corpus.jsonl"),
            generic: GenericSource {
                method: aspectsim::embedding::AVG_TOKEN_TAG.into(),
                tokens: Some(PathBuf::from("tokens.txt")),
                vectors: None,
            },
            max_label_size: DEFAULT_MAX_LABEL_SIZE,
            neg_ratio: 0.5,
            folds: 5,
            eval_folds: None,
            losses: vec![LossKind::Contrastive, LossKind::Mnrl],
            specializer: SpecializerConfig::default(),
            ks: vec![1, 5, 10, 25, 50],
            table_k: 10,
            overlap_k: 50,
            baseline: BaselineSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config; relative paths inside it are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.corpus);
        if let Some(p) = self.generic.tokens.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.generic.vectors.as_mut() {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.generic.tokens.is_some() == self.generic.vectors.is_some() {
            return fail("set exactly one of generic.tokens and generic.vectors".into());
        }
        if self.generic.method.is_empty() || self.generic.method.contains(['/', '\\', '+']) {
            return fail(format!(
                "invalid generic method tag `{}`",
                self.generic.method
            ));
        }
        if self.aspects.is_empty() {
            return fail("at least one aspect is required".into());
        }
        let file_safe = |a: &AspectId| {
            !a.as_str().is_empty()
                && a.as_str()
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        };
        if let Some(a) = self.aspects.iter().find(|a| !file_safe(a)) {
            return fail(format!(
                "aspect name `{a}` must be ASCII letters, digits, `_` or `-`"
            ));
        }
        if self.folds < 2 {
            return fail("folds must be at least 2".into());
        }
        if let Some(f) = self.test_folds().iter().find(|&&f| f >= self.folds) {
            return fail(format!(
                "eval fold {f} out of range for {} folds",
                self.folds
            ));
        }
        if self.test_folds().is_empty() {
            return fail("eval_folds must not be empty".into());
        }
        if self.losses.is_empty() {
            return fail("at least one loss is required".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.table_k == 0 || self.overlap_k == 0 {
            return fail("cut-offs must be positive".into());
        }
        self.specializer
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn test_folds(&self) -> Vec<usize> {
        let mut folds = self
            .eval_folds
            .clone()
            .unwrap_or_else(|| (0..self.folds).collect());
        folds.sort_unstable();
        folds.dedup();
        folds
    }

    /// Retrieval depth needed by every report.
    pub fn depth(&self) -> usize {
        self.ks
            .iter()
            .copied()
            .chain([self.table_k, self.overlap_k])
            .max()
            .unwrap_or(10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let config: PipelineConfig = toml::from_str(
            r#"
            corpus = "papers.jsonl"
            eval_folds = [0]
            [generic]
            method = "specter"
            vectors = "specter.aemb"
            [specializer]
            epochs = 3
            "#,
        )
        .unwrap();
        config.validate().unwrap();
        assert_eq!(config.specializer.epochs, 3);
        assert_eq!(config.specializer.lambda, 0.1);
        assert_eq!(config.losses.len(), 2);
        assert_eq!(config.depth(), 50);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_sources() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1").is_err());
        let mut config = PipelineConfig::default();
        config.generic.vectors = Some("v.txt".into());
        assert!(config.validate().is_err());
        config.generic.tokens = None;
        config.validate().unwrap();
        config.eval_folds = Some(vec![7]);
        assert!(config.validate().is_err());
    }
}
