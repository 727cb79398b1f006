//! Pipeline runner, run manifest and HTTP service for aspect-specific paper
//! similarity.

pub mod api;
pub mod config;
pub mod fixture;
pub mod manifest;
pub mod pipeline;
pub mod snapshot;

pub use aspectsim;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] aspectsim::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },

    #[error("snapshot: {0}")]
    Snapshot(String),
}
