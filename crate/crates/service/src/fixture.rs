//! Writes a synthetic corpus, its word vectors and a matching pipeline config
//! to a directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aspectsim::synthetic::{generate, SyntheticConfig};

use crate::config::{GenericSource, PipelineConfig};
use crate::PipelineError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TOKENS_FILE: &str = "tokens.txt";
pub const CONFIG_FILE: &str = "pipeline.toml";

/// Settings that suit the synthetic corpus: a narrow hidden layer and a
/// higher learning rate than the defaults. Baseline included.
pub fn synthetic_pipeline(seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig {
        seed,
        corpus: CORPUS_FILE.into(),
        generic: GenericSource {
            method: aspectsim::embedding::AVG_TOKEN_TAG.into(),
            tokens: Some(TOKENS_FILE.into()),
            vectors: None,
        },
        ..PipelineConfig::default()
    };
    config.specializer.hidden_widths = Some(vec![32]);
    config.specializer.learning_rate = 5e-3;
    config.specializer.epochs = 10;
    config.baseline.enabled = true;
    config
}

pub struct FixturePaths {
    pub corpus: PathBuf,
    pub tokens: PathBuf,
    pub config: PathBuf,
}

/// Generates the corpus and writes it with `pipeline` as `pipeline.toml`.
/// The config's corpus and token paths are replaced by the written files.
pub fn write_fixture(
    dir: &Path,
    synthetic: &SyntheticConfig,
    pipeline: &PipelineConfig,
) -> Result<FixturePaths, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let data = generate(synthetic)?;
    let paths = FixturePaths {
        corpus: dir.join(CORPUS_FILE),
        tokens: dir.join(TOKENS_FILE),
        config: dir.join(CONFIG_FILE),
    };
    let mut out = BufWriter::new(File::create(&paths.corpus)?);
    data.corpus.write_snapshot(&mut out)?;
    out.flush()?;
    let mut out = BufWriter::new(File::create(&paths.tokens)?);
    data.tokens.to_matrix()?.write_text(&mut out)?;
    out.flush()?;

    let mut config = pipeline.clone();
    config.aspects = synthetic.aspects.clone();
    config.corpus = CORPUS_FILE.into();
    config.generic.tokens = Some(TOKENS_FILE.into());
    config.generic.vectors = None;
    config.validate()?;
    let text = toml::to_string(&config).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(&paths.config, text)?;
    Ok(paths)
}
