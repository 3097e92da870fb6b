//! Node service, HTTP clients and command line for the IPPO testbed.

pub mod cli;
pub mod client;
pub mod config;
pub mod persist;
pub mod server;
pub mod wire;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot listen on {addr}: {reason}")]
    Bind { addr: String, reason: String },
    #[error("corrupt state in {}: {reason}", path.display())]
    CorruptState { path: PathBuf, reason: String },
    #[error("invalid node config: {0}")]
    Config(String),
}
