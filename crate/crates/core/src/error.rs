use std::io;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A NaN or infinity appeared while differentiating. `layer` is the index
    /// of the dense layer whose gradient went non-finite.
    #[error("numeric failure in layer {layer}: {detail}")]
    NumericFailure { layer: usize, detail: String },

    /// Training aborted; carries the 1-based epoch and 0-based iteration.
    #[error("training failed at epoch {epoch}, iteration {iteration}: {source}")]
    Training {
        epoch: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
