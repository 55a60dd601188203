//! Live match host: steps a session at a fixed tick, streams state frames to
//! websocket clients and lets one pilot fly the runner.

mod app;
pub mod session;
pub mod wire;

pub use app::{start, ServerHandle};
pub use session::{ClientId, Ledger, Session, SessionSpec, SessionSummary};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pursuit_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
