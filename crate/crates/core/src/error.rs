use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no attribute value occurs in the target text; plan cannot be derived")]
    PlanUnderivable,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("plan is empty")]
    EmptyPlan,
    #[error("style reference text is empty")]
    EmptyReference,
    #[error("no center for style {0} in the current batch")]
    MissingCenter(usize),
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error("cannot score an empty text")]
    EmptyText,
    #[error("classifier training needs at least two styles, found {0}")]
    SingleStyleCorpus(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("training corpus has no samples for style {0}")]
    DataMissingStyle(usize),
    #[error("target text is missing")]
    MissingTarget,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autograd(#[from] styled2t_autograd::AutogradError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data rather
    /// than by the runtime.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::PlanUnderivable
                | Error::Schema { .. }
                | Error::EmptyReference
                | Error::EmptyCorpus
                | Error::EmptyText
                | Error::SingleStyleCorpus(_)
                | Error::EmptyInput
                | Error::DataMissingStyle(_)
                | Error::MissingTarget
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
