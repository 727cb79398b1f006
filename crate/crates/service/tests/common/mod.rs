#![allow(dead_code)]

use std::path::Path;

use aspectsim::synthetic::SyntheticConfig;
use aspectsim_service::config::PipelineConfig;
use aspectsim_service::fixture::{synthetic_pipeline, write_fixture};

/// A corpus small enough that a full pipeline run takes a few seconds.
pub fn small_synthetic() -> SyntheticConfig {
    SyntheticConfig {
        docs: 240,
        dim: 16,
        labels_per_aspect: 8,
        noise: 0.6,
        ..SyntheticConfig::default()
    }
}

pub fn small_pipeline() -> PipelineConfig {
    let mut config = synthetic_pipeline(7);
    config.folds = 4;
    config.eval_folds = Some(vec![0]);
    config.specializer.epochs = 2;
    config.specializer.hidden_widths = Some(vec![16]);
    config.ks = vec![1, 5, 10, 25];
    config.overlap_k = 20;
    config.baseline.sweep_ns = vec![10, 50];
    config.baseline.pairwise.epochs = 3;
    config
}

/// Writes the small fixture into `dir` and loads its config back.
pub fn small_fixture(dir: &Path) -> PipelineConfig {
    let paths = write_fixture(dir, &small_synthetic(), &small_pipeline()).unwrap();
    PipelineConfig::load(&paths.config).unwrap()
}
