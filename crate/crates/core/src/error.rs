use std::io;

/// Errors produced anywhere in the compression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed trace: {0}")]
    Format(String),

    #[error("truncated trace: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("every head is heterogeneous; no budget remains to divide")]
    NoNonHeterogeneousHeads,

    #[error("infeasible budget: {budget} tokens cannot cover {required} for heterogeneous heads")]
    InfeasibleBudget { budget: usize, required: usize },

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("layer {layer}{}: {source}", head.map(|h| format!(", head {h}")).unwrap_or_default())]
    Context {
        layer: usize,
        head: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the error variant.
    ///
    /// Context wrappers report the kind of the innermost error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::EmptyInput(_) => "empty-input",
            Error::Parameter(_) => "parameter",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::UnsupportedDtype(_) => "unsupported-dtype",
            Error::NoNonHeterogeneousHeads => "no-nonheterogeneous-heads",
            Error::InfeasibleBudget { .. } => "infeasible-budget",
            Error::Consistency(_) => "consistency",
            Error::Context { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Strips any layer/head context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn in_layer(self, layer: usize) -> Error {
        Error::Context {
            layer,
            head: None,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_head(self, layer: usize, head: usize) -> Error {
        Error::Context {
            layer,
            head: Some(head),
            source: Box::new(self),
        }
    }
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
