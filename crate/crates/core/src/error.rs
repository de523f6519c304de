use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("requested layers {requested} but only {available} are available")]
    LayerBound { requested: String, available: usize },

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(
        "no embedding stored for scene {scene_id}, config rank {config_rank}, aug {aug_index}"
    )]
    MissingKey {
        scene_id: u64,
        config_rank: u16,
        aug_index: u16,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParam(_) | Error::Config(_) | Error::LayerBound { .. }
        ) || matches!(self, Error::Path { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
