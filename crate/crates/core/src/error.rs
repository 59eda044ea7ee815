use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("mask has no active rows; rescale factor is undefined")]
    UndefinedRescale,
    #[error("corrupt mask: {0}")]
    CorruptMask(String),
    #[error("token {token} outside vocabulary of size {vocab}")]
    Vocabulary { token: u32, vocab: usize },
    #[error("augmentation failed: {0}")]
    Augmentation(String),
    #[error("instance too large: {0}")]
    Capacity(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("malformed wire data: {0}")]
    Decode(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
