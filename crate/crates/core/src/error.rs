use alloc::string::String;

/// Errors produced by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operation `{0}` is not differentiable")]
    NotDifferentiable(String),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("weight mismatch: {0}")]
    Weights(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        detail: detail.into(),
    }
}
