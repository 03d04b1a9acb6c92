use depthgaze::autoencoder::CnnError;
use depthgaze::config::ConfigError;
use depthgaze::dataset::DatasetError;
use depthgaze::evaluation::EvalError;
use depthgaze::fixation::FixationError;
use depthgaze::overlay::OverlayError;
use depthgaze::synth::SynthError;
use depthgaze::transition::TransitionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fixation(#[from] FixationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// 1 for usage errors, 2 for data errors, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Cnn(CnnError::NonFiniteLoss(_)) | Error::Transition(TransitionError::NonFiniteFeature(_)) => 3,
            _ => 2,
        }
    }
}

pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}
