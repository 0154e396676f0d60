use thiserror::Error;

/// Errors raised across the membership-test engine.
#[derive(Debug, Error)]
pub enum PmtError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("cuckoo stash overflow: {unplaced} unplaced entries, capacity {capacity}")]
    CuckooStashOverflow { unplaced: usize, capacity: usize },

    #[error("bad magic bytes in representation header")]
    BadMagic,

    #[error("unsupported representation version {0}")]
    BadVersion(u16),

    #[error("unknown representation kind tag {0}")]
    BadKind(u8),

    #[error("message authentication failed")]
    MacMismatch,

    #[error("payload truncated: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("trusted application at capacity ({occupancy}/{capacity})")]
    CapacityExceeded { occupancy: usize, capacity: usize },

    #[error("chunk delivered out of order: expected {expected}, got {got}")]
    ChunkOutOfOrder { expected: u32, got: u32 },

    #[error("chunk {0} does not match the provisioned representation")]
    ChunkMismatch(u32),

    #[error("operation requires a {expected} representation")]
    WrongKind { expected: &'static str },

    #[error("ORAM stash holds {size} blocks, bound is {bound}")]
    OramStashOverflow { size: usize, bound: usize },

    #[error("ORAM configuration: {0}")]
    OramConfig(String),

    #[error("ORAM block failed integrity check")]
    BlockIntegrity,

    #[error("attestation refused: {0}")]
    AttestationRefused(&'static str),

    #[error("channel message rejected: {0}")]
    ChannelRejected(&'static str),

    #[error("unknown session {0}")]
    UnknownSession(u64),

    #[error("malformed wire frame: {0}")]
    Wire(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PmtError>;
