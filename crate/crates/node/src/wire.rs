//! Simulator backends running every node as an HTTP service on loopback, so
//! scenarios exercise the same code path as multi-process deployments.

use ippo_core::ledger::{Chain, ValidatorBackend};
use ippo_core::simnet::{Backends, SimError};
use ippo_core::storage::BlobStore;
use ippo_core::Keypair;

use crate::client::{HttpLedger, HttpStorage};
use crate::server::{LedgerService, NodeServer, StorageService};

#[derive(Default)]
pub struct WireBackends {
    servers: Vec<NodeServer>,
}

impl WireBackends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn urls(&self) -> Vec<String> {
        self.servers.iter().map(NodeServer::url).collect()
    }

    pub fn shutdown(self) {
        for server in self.servers {
            if let Err(e) = server.shutdown() {
                log::warn!("node shutdown failed: {e}");
            }
        }
    }
}

fn setup(e: impl std::fmt::Display) -> SimError {
    SimError::Backend(e.to_string())
}

impl Backends for WireBackends {
    fn ledger(&mut self, _index: usize, chain: Chain, key: Keypair) -> Result<Box<dyn ValidatorBackend>, SimError> {
        let service = LedgerService::new(chain, Some(key), None, &[]).map_err(setup)?;
        let server = NodeServer::start("127.0.0.1:0", Box::new(service), &[], None).map_err(setup)?;
        let client = HttpLedger::new(&server.url());
        self.servers.push(server);
        Ok(Box::new(client))
    }

    fn storage(&mut self, _index: usize) -> Result<Box<dyn BlobStore>, SimError> {
        let service = StorageService::new(None, None).map_err(setup)?;
        let server = NodeServer::start("127.0.0.1:0", Box::new(service), &[], None).map_err(setup)?;
        let client = HttpStorage::new(&server.url());
        self.servers.push(server);
        Ok(Box::new(client))
    }
}
