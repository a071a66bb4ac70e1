use alloc::string::String;

/// Errors raised by decoding the binary tensor and message formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    #[error("truncated input: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimensions overflow or are inconsistent")]
    BadDims,
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("payload of {len} bytes is invalid for {kind}")]
    BadPayload { kind: &'static str, len: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error: {0}")]
    Shape(String),
    /// Invalid input value (class id out of range, indivisible size, ...).
    #[error("input error: {0}")]
    Input(String),
    /// Caller broke an API contract (non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}
