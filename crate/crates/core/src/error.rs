use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A value violates a type invariant (shapes, ranges, normalization).
    #[error("validation error: {0}")]
    Validation(String),
    /// A configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),
    /// The synthetic scene generator could not satisfy its templates.
    #[error("generation error: {0}")]
    Generation(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
