//! Hub daemon, client key agent, table files, scenario files and the
//! benchmark harness built on `dske-core`.

pub mod agent;
pub mod bench;
pub mod config;
pub mod hub;
pub mod scenario;
pub mod tables;
pub mod wire;

pub use dske_core as core;

use dske_core::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
    #[error("table: {0}")]
    Table(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("not enough PSRD left for hub {0}")]
    InsufficientPsrd(usize),
    #[error("peer unreachable: {reachable} of {needed} required hubs accepted the shares")]
    PeerUnreachable { reachable: usize, needed: usize },
    #[error("key {0} aborted: no candidate secret validated")]
    KeyAborted(u64),
    #[error("timed out waiting for key {0}")]
    Timeout(u64),
    #[error("key {0} was already delivered")]
    AlreadyDelivered(u64),
    #[error("request: {0}")]
    Request(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
