use thiserror::Error;

use crate::attention::AttentionError;
use crate::corpus::CorpusError;
use crate::episodes::EpisodeError;
use crate::grad::GradError;
use crate::meta::adam::AdamError;
use crate::ridge::RidgeError;
use crate::signatures::SignatureError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Ridge(#[from] RidgeError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("model architecture does not match configuration: {0}")]
    ArchitectureMismatch(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
