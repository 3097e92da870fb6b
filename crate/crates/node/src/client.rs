//! Blocking HTTP clients for the ledger and storage node services.

use std::io::Read;
use std::time::Duration;

use ippo_core::agent::DataKey;
use ippo_core::ledger::{
    Block, ChainStatus, EscrowState, LedgerClient, LedgerError, Listing, Transaction, ValidatorBackend,
};
use ippo_core::storage::{BlobStore, RemovalAuth, StorageError};
use ippo_core::{ContentId, Digest, PublicKey};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const PUBKEY_HEADER: &str = "X-Ippo-Pubkey";
pub const SIGNATURE_HEADER: &str = "X-Ippo-Signature";

const TIMEOUT: Duration = Duration::from_secs(30);

fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(TIMEOUT).build()
}

fn trim(url: &str) -> String {
    url.trim_end_matches('/').to_string()
}

#[derive(Deserialize)]
struct TxidBody {
    txid: Digest,
}

#[derive(Deserialize)]
struct KeyBody {
    key: DataKey,
}

#[derive(Deserialize)]
struct BalanceBody {
    balance: u64,
}

#[derive(Deserialize)]
struct EscrowBody {
    escrow: Option<EscrowState>,
}

#[derive(Deserialize)]
struct ProducedBody {
    block: Option<Block>,
}

#[derive(Deserialize)]
struct StoredBody {
    content_id: ContentId,
}

/// Ledger node reached over HTTP. Errors returned by the node arrive as the
/// same [`LedgerError`] values; network failures become `Transport`.
#[derive(Clone)]
pub struct HttpLedger {
    base: String,
    agent: ureq::Agent,
}

fn transport(e: impl std::fmt::Display) -> LedgerError {
    LedgerError::Transport { reason: e.to_string() }
}

impl HttpLedger {
    pub fn new(base_url: &str) -> Self {
        Self { base: trim(base_url), agent: agent() }
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    fn call<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<Vec<u8>>) -> Result<T, LedgerError> {
        let request = self.agent.request(method, &format!("{}{path}", self.base)).set("Content-Type", "application/json");
        let response = match body {
            Some(bytes) => request.send_bytes(&bytes),
            None => request.call(),
        };
        match response {
            Ok(r) => r.into_json().map_err(transport),
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().map_err(transport)?;
                Err(serde_json::from_str(&text).unwrap_or_else(|_| transport(format!("HTTP {code}: {text}"))))
            }
            Err(e) => Err(transport(e)),
        }
    }

    pub fn shutdown(&self) -> Result<(), LedgerError> {
        self.call::<serde_json::Value>("POST", "/shutdown", Some(b"{}".to_vec())).map(|_| ())
    }
}

impl LedgerClient for HttpLedger {
    fn submit(&mut self, tx: Transaction) -> Result<Digest, LedgerError> {
        self.call::<TxidBody>("POST", "/tx", Some(tx.to_canonical_bytes())).map(|b| b.txid)
    }

    fn listings(&self) -> Result<Vec<Listing>, LedgerError> {
        self.call("GET", "/datasets", None)
    }

    fn key(&self, content_id: &ContentId) -> Result<DataKey, LedgerError> {
        self.call::<KeyBody>("GET", &format!("/key/{content_id}"), None).map(|b| b.key)
    }

    fn balance(&self, account: &PublicKey) -> Result<u64, LedgerError> {
        self.call::<BalanceBody>("GET", &format!("/balance/{account}"), None).map(|b| b.balance)
    }

    fn escrow(&self, content_id: &ContentId, buyer: &PublicKey) -> Result<Option<EscrowState>, LedgerError> {
        self.call::<EscrowBody>("GET", &format!("/escrow/{content_id}/{buyer}"), None).map(|b| b.escrow)
    }

    fn status(&self) -> Result<ChainStatus, LedgerError> {
        self.call("GET", "/status", None)
    }

    fn blocks_from(&self, height: u64) -> Result<Vec<Block>, LedgerError> {
        self.call("GET", &format!("/blocks?from={height}"), None)
    }
}

impl ValidatorBackend for HttpLedger {
    fn produce(&mut self) -> Result<Option<Block>, LedgerError> {
        self.call::<ProducedBody>("POST", "/produce", Some(b"{}".to_vec())).map(|b| b.block)
    }

    fn receive_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let body = serde_json::to_vec(&block).map_err(transport)?;
        self.call::<serde_json::Value>("POST", "/block", Some(body)).map(|_| ())
    }
}

/// One storage node reached over HTTP.
#[derive(Clone)]
pub struct HttpStorage {
    base: String,
    agent: ureq::Agent,
}

fn unavailable(e: impl std::fmt::Display) -> StorageError {
    StorageError::Unavailable { reason: e.to_string() }
}

impl HttpStorage {
    pub fn new(base_url: &str) -> Self {
        Self { base: trim(base_url), agent: agent() }
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    fn error_from(code: u16, r: ureq::Response) -> StorageError {
        match r.into_string() {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|_| unavailable(format!("HTTP {code}: {text}"))),
            Err(e) => unavailable(e),
        }
    }

    pub fn shutdown(&self) -> Result<(), StorageError> {
        match self.agent.post(&format!("{}/shutdown", self.base)).send_bytes(b"{}") {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(code, r)) => Err(Self::error_from(code, r)),
            Err(e) => Err(unavailable(e)),
        }
    }
}

impl BlobStore for HttpStorage {
    fn put_blob(&mut self, blob: &[u8]) -> Result<ContentId, StorageError> {
        match self.agent.put(&format!("{}/blob", self.base)).set("Content-Type", "application/octet-stream").send_bytes(blob) {
            Ok(r) => r.into_json::<StoredBody>().map(|b| b.content_id).map_err(unavailable),
            Err(ureq::Error::Status(code, r)) => Err(Self::error_from(code, r)),
            Err(e) => Err(unavailable(e)),
        }
    }

    fn get_blob(&self, id: &ContentId) -> Result<Option<Vec<u8>>, StorageError> {
        match self.agent.get(&format!("{}/blob/{id}", self.base)).call() {
            Ok(r) => {
                let mut bytes = Vec::new();
                r.into_reader().read_to_end(&mut bytes).map_err(unavailable)?;
                Ok(Some(bytes))
            }
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(ureq::Error::Status(code, r)) => Err(Self::error_from(code, r)),
            Err(e) => Err(unavailable(e)),
        }
    }

    fn delete_blob(&mut self, id: &ContentId, auth: &RemovalAuth) -> Result<(), StorageError> {
        let request = self
            .agent
            .delete(&format!("{}/blob/{id}", self.base))
            .set(PUBKEY_HEADER, &auth.announcer.to_hex())
            .set(SIGNATURE_HEADER, &auth.signature.to_hex());
        match request.call() {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(code, r)) => Err(Self::error_from(code, r)),
            Err(e) => Err(unavailable(e)),
        }
    }
}
