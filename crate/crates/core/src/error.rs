use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An input tensor or gradient has dimensions inconsistent with the
    /// operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A hyper-parameter combination or dataset/model pairing is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file (IDX, CIFAR-10 batch, weight file) violates its format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A gradient became NaN or infinite during optimization.
    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
