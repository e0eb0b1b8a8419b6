use thiserror::Error;

use crate::topology::Endpoint;

pub type Result<T, E = SmiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SmiError {
    #[error("malformed packet: {0}")]
    MalformedPacket(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("endpoint {0} is wired more than once")]
    DuplicateEndpoint(Endpoint),

    #[error("unreachable rank pairs (src, dst): {0:?}")]
    Unreachable(Vec<(u8, u8)>),

    #[error("routing tables: {0}")]
    Tables(String),

    #[error("unroutable packet at rank {rank}: {reason}")]
    Unroutable { rank: u8, reason: String },

    #[error("port {0} is not declared")]
    UndeclaredPort(u8),

    #[error("port {port} already has an open {what} channel")]
    PortBusy { port: u8, what: &'static str },

    #[error("rank {rank} out of range for communicator of size {size}")]
    RankOutOfRange { rank: usize, size: usize },

    #[error("channel is closed")]
    ChannelClosed,

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("deadlock detected: {0}")]
    Deadlock(String),

    #[error("run aborted")]
    Aborted,

    #[error("program panicked: {0}")]
    ProgramPanicked(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
