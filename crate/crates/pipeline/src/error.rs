use countseg_core::Error as CoreError;
use thiserror::Error;

use crate::counter::CounterError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Counter(#[from] CounterError),

    #[error("image {image_id}: matcher output violates its constraints: {violations}")]
    Invariant { image_id: String, violations: String },

    #[error("image {image_id}: {source}")]
    Image {
        image_id: String,
        #[source]
        source: Box<PipelineError>,
    },

    #[error("{0}")]
    Input(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Remote,
    Invariant,
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Core(_) | PipelineError::Input(_) => ErrorKind::Input,
            PipelineError::Counter(e) if e.is_remote() => ErrorKind::Remote,
            PipelineError::Counter(_) => ErrorKind::Input,
            PipelineError::Invariant { .. } => ErrorKind::Invariant,
            PipelineError::Image { source, .. } => source.kind(),
        }
    }

    pub(crate) fn for_image(self, image_id: &str) -> Self {
        match self {
            e @ PipelineError::Image { .. } => e,
            e => PipelineError::Image {
                image_id: image_id.to_string(),
                source: Box::new(e),
            },
        }
    }
}
