use thiserror::Error;

use crate::augmentation::AugmentError;
use crate::cam::CamError;
use crate::config::ConfigError;
use crate::corpus::CorpusError;
use crate::densenet::ModelError;
use crate::features::FeatureError;
use crate::labels::VocabError;
use crate::metrics::MetricError;
use crate::tensor::TensorError;

/// Errors from the pipeline layers that combine several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cam(#[from] CamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("clip `{id}`: {msg}")]
    Clip { id: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True for problems with user input rather than failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Vocab(_)
                | Error::Invalid(_)
                | Error::Clip { .. }
                | Error::Metric(_)
                | Error::Feature(_)
                | Error::Model(ModelError::InputTooShort { .. } | ModelError::MelMismatch { .. })
        ) || matches!(
            self,
            Error::Corpus(
                CorpusError::Parse { .. }
                    | CorpusError::DuplicateId { .. }
                    | CorpusError::UnknownClass { .. }
                    | CorpusError::Invalid { .. }
                    | CorpusError::Io { .. }
            )
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
