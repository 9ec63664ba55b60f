use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {context}: {left} vs {right}")]
    ShapeMismatch {
        context: String,
        left: Shape4,
        right: Shape4,
    },

    #[error("shape error: {0}")]
    Shape(String),

    /// Shape inference or graph construction failed at a specific layer.
    #[error("layer `{layer}`: {detail}")]
    Layer { layer: String, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid label {label} (num_classes {num_classes})")]
    InvalidLabel { label: u32, num_classes: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("load: {0}")]
    Load(String),

    #[error("parse: line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used as the `<kind>` in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid-shape",
            Error::ShapeMismatch { .. } | Error::Shape(_) | Error::Layer { .. } => "shape",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidLabel { .. } => "invalid-label",
            Error::NonFinite(_) => "non-finite",
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::Load(_) => "load",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn layer(layer: &str, detail: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            detail: detail.into(),
        }
    }
}
