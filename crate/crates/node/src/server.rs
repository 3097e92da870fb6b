//! HTTP/JSON node service. Each node's state sits behind one mutex, so
//! requests are applied one at a time in arrival order.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use ippo_core::ledger::{Block, Chain, LedgerClient, LedgerError, LedgerNode, Transaction, ValidatorBackend};
use ippo_core::storage::{BlobStore, RemovalAuth, StorageError, StorageNode};
use ippo_core::{ContentId, Keypair, PublicKey, Signature};
use serde::Serialize;
use serde_json::json;

use crate::client::{HttpLedger, PUBKEY_HEADER, SIGNATURE_HEADER};
use crate::persist::{BlobDir, BlockLog};
use crate::NodeError;

const WORKERS: usize = 4;

pub struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, value: &impl Serialize) -> Self {
        Self { status, content_type: "application/json", body: serde_json::to_vec(value).expect("serializable reply") }
    }

    fn ok(value: &impl Serialize) -> Self {
        Self::json(200, value)
    }

    fn bytes(body: Vec<u8>) -> Self {
        Self { status: 200, content_type: "application/octet-stream", body }
    }

    fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::json(400, &json!({"code": "bad_request", "message": message.to_string()}))
    }

    fn not_found() -> Self {
        Self::json(404, &json!({"code": "no_route"}))
    }
}

pub struct HttpRequest<'a> {
    pub method: &'a str,
    pub path: &'a str,
    pub query: BTreeMap<&'a str, &'a str>,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl HttpRequest<'_> {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }
}

/// Blocks a handler wants pushed to peers once the state lock is released.
pub type Gossip = Vec<Block>;

pub trait Service: Send {
    fn handle(&mut self, request: &HttpRequest) -> (Reply, Gossip);
    /// Flushes state to disk.
    fn flush(&mut self) -> Result<(), NodeError>;
    /// Periodic work for auto-producing validators.
    fn tick(&mut self) -> Gossip {
        Vec::new()
    }
}

fn ledger_status(e: &LedgerError) -> u16 {
    match e {
        LedgerError::UnknownDataset { .. } | LedgerError::KeyNotAvailable { .. } | LedgerError::NoEscrow { .. } => 404,
        LedgerError::DuplicateTx { .. } => 409,
        LedgerError::Transport { .. } => 502,
        _ => 400,
    }
}

fn ledger_reply<T: Serialize>(result: Result<T, LedgerError>) -> Reply {
    match result {
        Ok(v) => Reply::ok(&v),
        Err(e) => Reply::json(ledger_status(&e), &e),
    }
}

fn storage_reply(e: StorageError) -> Reply {
    let status = match e {
        StorageError::NotFound { .. } | StorageError::UnknownId { .. } => 404,
        StorageError::BadSignature => 403,
        StorageError::Unavailable { .. } => 502,
        _ => 400,
    };
    Reply::json(status, &e)
}

pub struct LedgerService {
    node: LedgerNode,
    log: Option<BlockLog>,
    peers: Vec<HttpLedger>,
}

impl LedgerService {
    /// Starts from `genesis`, or from the block log in `state_dir` when one
    /// exists.
    pub fn new(
        genesis: Chain,
        key: Option<Keypair>,
        state_dir: Option<&Path>,
        peers: &[String],
    ) -> Result<Self, NodeError> {
        let validators = genesis.validators().to_vec();
        let (log, chain) = match state_dir {
            Some(dir) => {
                let (log, chain) = BlockLog::open(dir, &validators, genesis)?;
                (Some(log), chain)
            }
            None => (None, genesis),
        };
        Ok(Self { node: LedgerNode::new(chain, key), log, peers: peers.iter().map(|p| HttpLedger::new(p)).collect() })
    }

    pub fn node(&self) -> &LedgerNode {
        &self.node
    }

    /// Writes blocks appended since `height` to the log.
    fn persist_from(&mut self, height: u64) -> Result<(), LedgerError> {
        if let Some(log) = &mut self.log {
            for block in &self.node.chain().blocks()[height as usize + 1..] {
                log.append(block).map_err(|e| LedgerError::Transport { reason: e.to_string() })?;
            }
        }
        Ok(())
    }

    fn produce(&mut self) -> Result<Option<Block>, LedgerError> {
        let before = self.node.chain().height();
        let block = self.node.produce()?;
        self.persist_from(before)?;
        Ok(block)
    }

    fn gossip_of(&self, block: &Option<Block>) -> Gossip {
        match block {
            Some(b) if !self.peers.is_empty() => vec![b.clone()],
            _ => Vec::new(),
        }
    }
}

impl Service for LedgerService {
    fn handle(&mut self, r: &HttpRequest) -> (Reply, Gossip) {
        let segments: Vec<&str> = r.path.trim_matches('/').split('/').collect();
        let reply = match (r.method, segments.as_slice()) {
            ("POST", ["tx"]) => match serde_json::from_slice::<Transaction>(&r.body) {
                Ok(tx) => ledger_reply(self.node.submit_tx(tx).map(|txid| json!({"txid": txid}))),
                Err(e) => Reply::bad_request(e),
            },
            ("GET", ["blocks"]) => match r.query.get("from").map_or(Ok(0), |h| h.parse::<u64>()) {
                Ok(from) => ledger_reply(self.node.blocks_from(from)),
                Err(e) => Reply::bad_request(e),
            },
            ("GET", ["datasets"]) => ledger_reply(self.node.listings()),
            ("GET", ["key", id]) => match ContentId::from_hex(id) {
                Ok(id) => ledger_reply(self.node.key(&id).map(|key| json!({"content_id": id, "key": key}))),
                Err(e) => Reply::bad_request(e),
            },
            ("GET", ["balance", pk]) => match PublicKey::from_hex(pk) {
                Ok(pk) => ledger_reply(self.node.balance(&pk).map(|b| json!({"pubkey": pk, "balance": b}))),
                Err(e) => Reply::bad_request(e),
            },
            ("GET", ["escrow", id, buyer]) => match (ContentId::from_hex(id), PublicKey::from_hex(buyer)) {
                (Ok(id), Ok(buyer)) => ledger_reply(self.node.escrow(&id, &buyer).map(|e| json!({"escrow": e}))),
                (Err(e), _) | (_, Err(e)) => Reply::bad_request(e),
            },
            ("GET", ["status"]) => ledger_reply(self.node.status()),
            ("POST", ["block"]) => match serde_json::from_slice::<Block>(&r.body) {
                Ok(block) => {
                    let before = self.node.chain().height();
                    let result = self.node.accept_block(block).and_then(|()| self.persist_from(before));
                    ledger_reply(result.map(|()| json!({"height": self.node.chain().height()})))
                }
                Err(e) => Reply::bad_request(e),
            },
            ("POST", ["produce"]) => {
                let produced = self.produce();
                let gossip = produced.as_ref().map(|b| self.gossip_of(b)).unwrap_or_default();
                return (ledger_reply(produced.map(|block| json!({"block": block}))), gossip);
            }
            _ => Reply::not_found(),
        };
        (reply, Vec::new())
    }

    fn flush(&mut self) -> Result<(), NodeError> {
        self.log.as_ref().map_or(Ok(()), BlockLog::sync)
    }

    fn tick(&mut self) -> Gossip {
        match self.produce() {
            Ok(block) => self.gossip_of(&block),
            Err(e) => {
                log::warn!("block production failed: {e}");
                Vec::new()
            }
        }
    }
}

pub struct StorageService {
    node: StorageNode,
    dir: Option<BlobDir>,
    ledger: Option<HttpLedger>,
}

impl StorageService {
    /// `ledger_url`, when set, is asked who announced a blob before a
    /// removal is honoured.
    pub fn new(state_dir: Option<&Path>, ledger_url: Option<&str>) -> Result<Self, NodeError> {
        let mut node = StorageNode::new();
        let dir = match state_dir {
            Some(path) => {
                let (dir, blobs) = BlobDir::open(path)?;
                for (id, bytes) in blobs {
                    node.insert_unchecked(id, bytes);
                }
                Some(dir)
            }
            None => None,
        };
        Ok(Self { node, dir, ledger: ledger_url.map(HttpLedger::new) })
    }

    fn io(e: NodeError) -> StorageError {
        StorageError::Unavailable { reason: e.to_string() }
    }

    fn delete(&mut self, id: &str, r: &HttpRequest) -> Result<(), StorageError> {
        let id = ContentId::from_hex(id).map_err(|_| StorageError::UnknownId { id: ContentId::ZERO })?;
        let header = |name| r.header(name).ok_or(StorageError::BadSignature);
        let announcer = PublicKey::from_hex(header(PUBKEY_HEADER)?).map_err(|_| StorageError::BadSignature)?;
        let signature = Signature::from_hex(header(SIGNATURE_HEADER)?).map_err(|_| StorageError::BadSignature)?;
        if let Some(ledger) = &self.ledger {
            let listings = ledger.listings().map_err(|e| StorageError::Unavailable { reason: e.to_string() })?;
            let seller = listings.iter().find(|l| l.content_id() == id).map(|l| l.seller);
            match seller {
                None => return Err(StorageError::UnknownId { id }),
                Some(seller) if seller != announcer => return Err(StorageError::BadSignature),
                Some(_) => {}
            }
        }
        self.node.delete_blob(&id, &RemovalAuth { announcer, signature })?;
        if let Some(dir) = &self.dir {
            dir.remove(&id).map_err(Self::io)?;
        }
        Ok(())
    }
}

impl Service for StorageService {
    fn handle(&mut self, r: &HttpRequest) -> (Reply, Gossip) {
        let segments: Vec<&str> = r.path.trim_matches('/').split('/').collect();
        let reply = match (r.method, segments.as_slice()) {
            ("PUT", ["blob"]) => {
                let id = self.node.put_blob(&r.body).expect("in-memory put");
                match self.dir.as_ref().map_or(Ok(()), |d| d.write(&id, &r.body)) {
                    Ok(()) => Reply::ok(&json!({"content_id": id})),
                    Err(e) => storage_reply(Self::io(e)),
                }
            }
            ("GET", ["blob", id]) => match ContentId::from_hex(id) {
                Ok(id) => match self.node.get_blob(&id) {
                    Ok(Some(bytes)) => Reply::bytes(bytes),
                    _ => storage_reply(StorageError::NotFound { id }),
                },
                Err(e) => Reply::bad_request(e),
            },
            ("DELETE", ["blob", id]) => match self.delete(id, r) {
                Ok(()) => Reply::ok(&json!({})),
                Err(e) => storage_reply(e),
            },
            ("GET", ["status"]) => Reply::ok(&json!({"blobs": self.node.len(), "bytes": self.node.stored_bytes()})),
            _ => Reply::not_found(),
        };
        (reply, Vec::new())
    }

    fn flush(&mut self) -> Result<(), NodeError> {
        Ok(())
    }
}

struct Shared {
    server: tiny_http::Server,
    service: Mutex<Box<dyn Service>>,
    peers: Vec<HttpLedger>,
    stop: AtomicBool,
}

/// A running node service.
pub struct NodeServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

fn push_to_peers(peers: &[HttpLedger], gossip: Gossip) {
    for block in gossip {
        for peer in peers {
            if let Err(e) = peer.clone().receive_block(block.clone()) {
                log::warn!("pushing block {} to {} failed: {e}", block.height, peer.url());
            }
        }
    }
}

fn serve_one(shared: &Shared, mut request: tiny_http::Request) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let method = request.method().as_str().to_string();
    let mut body = Vec::new();
    if let Err(e) = request.as_reader().read_to_end(&mut body) {
        log::warn!("reading request body failed: {e}");
        return;
    }
    let headers = request
        .headers()
        .iter()
        .map(|h| (h.field.as_str().as_str().to_ascii_lowercase(), h.value.as_str().to_string()))
        .collect();
    let query = query.split('&').filter_map(|kv| kv.split_once('=')).collect();
    let req = HttpRequest { method: &method, path, query, headers, body };

    let shutting_down = method == "POST" && path == "/shutdown";
    let (reply, gossip) = if shutting_down {
        let flushed = shared.service.lock().expect("service lock").flush();
        shared.stop.store(true, Ordering::SeqCst);
        match flushed {
            Ok(()) => (Reply::ok(&json!({"stopping": true})), Vec::new()),
            Err(e) => (Reply::json(500, &json!({"code": "flush_failed", "message": e.to_string()})), Vec::new()),
        }
    } else {
        shared.service.lock().expect("service lock").handle(&req)
    };
    log::debug!("{method} {path} -> {}", reply.status);
    let header = tiny_http::Header::from_bytes("Content-Type", reply.content_type).expect("static header");
    let response = tiny_http::Response::from_data(reply.body).with_status_code(reply.status).with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("responding failed: {e}");
    }
    push_to_peers(&shared.peers, gossip);
    if shutting_down {
        for _ in 0..WORKERS + 1 {
            shared.server.unblock();
        }
    }
}

impl NodeServer {
    /// Binds `listen` (port 0 picks a free port) and starts serving.
    /// `block_interval` makes a validator produce on its own schedule.
    pub fn start(
        listen: &str,
        service: Box<dyn Service>,
        peers: &[String],
        block_interval: Option<Duration>,
    ) -> Result<Self, NodeError> {
        let server = tiny_http::Server::http(listen).map_err(|e| NodeError::Bind { addr: listen.into(), reason: e.to_string() })?;
        let addr = server.server_addr().to_ip().ok_or_else(|| NodeError::Bind { addr: listen.into(), reason: "not an IP socket".into() })?;
        let shared = Arc::new(Shared {
            server,
            service: Mutex::new(service),
            peers: peers.iter().map(|p| HttpLedger::new(p)).collect(),
            stop: AtomicBool::new(false),
        });
        let mut threads: Vec<JoinHandle<()>> = (0..WORKERS)
            .map(|_| {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    while !shared.stop.load(Ordering::SeqCst) {
                        match shared.server.recv() {
                            Ok(request) => serve_one(&shared, request),
                            Err(e) => {
                                // unblock() during shutdown surfaces here too
                                if !shared.stop.load(Ordering::SeqCst) {
                                    log::warn!("accept failed: {e}");
                                }
                                break;
                            }
                        }
                    }
                    shared.server.unblock();
                })
            })
            .collect();
        if let Some(interval) = block_interval {
            let shared = Arc::clone(&shared);
            threads.push(std::thread::spawn(move || {
                while !shared.stop.load(Ordering::SeqCst) {
                    std::thread::sleep(interval);
                    let gossip = shared.service.lock().expect("service lock").tick();
                    push_to_peers(&shared.peers, gossip);
                }
            }));
        }
        log::info!("listening on {addr}");
        Ok(Self { addr, shared, threads })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until a `/shutdown` request has been served.
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Flushes state and stops serving.
    pub fn shutdown(self) -> Result<(), NodeError> {
        self.shared.stop.store(true, Ordering::SeqCst);
        for _ in 0..WORKERS + 1 {
            self.shared.server.unblock();
        }
        let flushed = self.shared.service.lock().expect("service lock").flush();
        for t in self.threads {
            let _ = t.join();
        }
        flushed
    }
}
