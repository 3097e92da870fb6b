//! Deterministic discrete-event runs of agents, storage nodes, ledger
//! validators and one buyer, with an observer replica checking ledger
//! invariants after every block.
//!
//! Writes (transactions, blocks, blob puts and gets) travel over a lossy
//! simulated network. Ledger reads are synchronous against the actor's home
//! validator, as a light client co-located with it would do.

mod config;
mod net;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{inject_fault, Fault, ScenarioConfig};
pub use net::{NetStats, MAX_ATTEMPTS, MAX_BACKOFF_TICKS};

use net::{Actor, Arrival, Network, Payload};

use crate::agent::{anonymise, encrypt_dataset, prepare_listing, DpParams, PreparedListing};
use crate::bdg::{analyze, fetch_datasets, Analysis, Dispute};
use crate::canonical;
use crate::crypto::{sha256, ContentId, Digest, Keypair, PublicKey};
use crate::ledger::{Chain, ChainStatus, EscrowState, LedgerClient, LedgerError, Listing, Transaction, ValidatorBackend};
use crate::storage::{BlobStore, StorageClient, StorageError, StorageNode};
use crate::trace::{generate_synthetic, GroundTruth};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

/// Creates the node implementations a scenario runs against.
pub trait Backends {
    fn ledger(&mut self, index: usize, chain: Chain, key: Keypair) -> Result<Box<dyn ValidatorBackend>, SimError>;
    fn storage(&mut self, index: usize) -> Result<Box<dyn BlobStore>, SimError>;
}

/// In-process [`crate::ledger::LedgerNode`]s and [`StorageNode`]s.
pub struct LocalBackends;

impl Backends for LocalBackends {
    fn ledger(&mut self, _index: usize, chain: Chain, key: Keypair) -> Result<Box<dyn ValidatorBackend>, SimError> {
        Ok(Box::new(crate::ledger::LedgerNode::new(chain, Some(key))))
    }

    fn storage(&mut self, _index: usize) -> Result<Box<dyn BlobStore>, SimError> {
        Ok(Box::new(StorageNode::new()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscrowOutcome {
    pub agent: usize,
    pub dataset: usize,
    pub content_id: ContentId,
    pub price: u64,
    pub state: Option<EscrowState>,
    pub purchase_height: Option<u64>,
    pub deadline_height: Option<u64>,
    /// Block at which the escrow left `Locked`.
    pub resolved_height: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// 1.0 when nothing was flagged.
    pub precision: f64,
    /// 1.0 when there was nothing to find.
    pub recall: f64,
}

impl DetectionScore {
    pub fn of(found: &BTreeSet<String>, truth: &BTreeSet<String>) -> Self {
        let tp = found.intersection(truth).count() as u64;
        let fp = found.len() as u64 - tp;
        let fneg = truth.len() as u64 - tp;
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fneg,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fneg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigests {
    pub tracker_report: Digest,
    pub labels: Digest,
    pub factors: Digest,
    pub ruleset: Digest,
}

impl ArtifactDigests {
    pub fn of(analysis: &Analysis) -> Self {
        Self {
            tracker_report: canonical::digest(&analysis.report),
            labels: canonical::digest(&analysis.labels),
            factors: canonical::digest(&analysis.factors),
            ruleset: sha256(analysis.ruleset.render().as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config_digest: Digest,
    pub seed: u64,
    pub completed: bool,
    pub chain: ChainStatus,
    pub validator_heights: Vec<u64>,
    /// `buyer` and `agent{i}/dataset{j}` pseudonyms.
    pub balances: BTreeMap<String, u64>,
    pub buyer_initial_balance: u64,
    pub buyer_final_balance: u64,
    pub listings_published: u64,
    pub purchases: u64,
    pub budget_exhausted: bool,
    pub escrows: Vec<EscrowOutcome>,
    pub analyzed: Vec<ContentId>,
    pub disputes: Vec<Dispute>,
    pub detection: Option<DetectionScore>,
    pub artifacts: Option<ArtifactDigests>,
    pub failed_gets: u64,
    pub rejected_txs: u64,
    pub network: NetStats,
    pub protocol_errors: Vec<String>,
    pub invariant_violations: Vec<String>,
    pub events: u64,
    pub ticks: u64,
}

impl ScenarioReport {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub analysis: Option<Analysis>,
}

pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioReport, SimError> {
    Ok(run_scenario_with(config, seed, &mut LocalBackends)?.report)
}

struct AgentDataset {
    listing: PreparedListing,
    pseudonym: Keypair,
    truth: GroundTruth,
    acks: BTreeSet<usize>,
    announced: bool,
    revealed: bool,
}

struct AgentActor {
    home: usize,
    datasets: Vec<AgentDataset>,
    puts: BTreeMap<u64, (usize, usize)>,
    started: bool,
    scanned: u64,
    never_reveals: bool,
}

enum Fetch {
    NotStarted,
    InFlight(BTreeSet<u64>),
    Got(Vec<u8>),
    Failed,
}

struct BuyerPurchase {
    listing: Listing,
    deadline_height: u64,
    refund_sent: bool,
    lapsed: bool,
    fetch: Fetch,
}

#[derive(PartialEq)]
enum Phase {
    WaitListings,
    Settling,
    Done,
}

struct Buyer {
    key: Keypair,
    phase: Phase,
    purchases: Vec<BuyerPurchase>,
    budget_exhausted: bool,
    analysis: Option<Analysis>,
    analyzed: Vec<ContentId>,
    disputes: Vec<Dispute>,
}

struct World<'c> {
    config: &'c ScenarioConfig,
    seed: u64,
    net: Network,
    validators: Vec<Box<dyn ValidatorBackend>>,
    storage: Vec<Box<dyn BlobStore>>,
    agents: Vec<AgentActor>,
    buyer: Buyer,
    observer: Chain,
    first_seen: BTreeMap<(ContentId, PublicKey), u64>,
    resolved_at: BTreeMap<(ContentId, PublicKey), u64>,
    failed_gets: u64,
    rejected_txs: u64,
    protocol_errors: Vec<String>,
    invariant_violations: Vec<String>,
}

/// Serves gets from blobs the buyer already fetched.
struct Fetched(BTreeMap<ContentId, Vec<u8>>);

impl StorageClient for Fetched {
    fn put(&mut self, _blob: &[u8]) -> Result<ContentId, StorageError> {
        Err(StorageError::Unavailable { reason: "read-only".into() })
    }

    fn get(&self, id: &ContentId) -> Result<Vec<u8>, StorageError> {
        self.0.get(id).cloned().ok_or(StorageError::NotFound { id: *id })
    }
}

/// Runs a scenario on the given backends. Protocol failures end up in the
/// report; only configuration and backend setup errors are returned.
pub fn run_scenario_with(config: &ScenarioConfig, seed: u64, backends: &mut dyn Backends) -> Result<ScenarioRun, SimError> {
    config.validate()?;
    let mut world = World::new(config, seed, backends)?;
    let completed = world.run();
    Ok(world.finish(completed))
}

impl<'c> World<'c> {
    fn new(config: &'c ScenarioConfig, seed: u64, backends: &mut dyn Backends) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let validator_keys: Vec<Keypair> = (0..config.validators).map(|_| Keypair::generate(&mut rng)).collect();
        let buyer_key = Keypair::generate(&mut rng);
        let mut agent_rngs: Vec<ChaCha8Rng> =
            (0..config.num_agents).map(|_| ChaCha8Rng::seed_from_u64(rng.gen())).collect();
        let net = Network::new(ChaCha8Rng::seed_from_u64(rng.gen()), config.latency_ticks, config.drop_probability);

        let genesis = if config.buyer_funds > 0 { vec![Transaction::mint(buyer_key.public(), config.buyer_funds, 0)] } else { vec![] };
        let chain = Chain::new(validator_keys.iter().map(Keypair::public).collect(), genesis)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let validators = validator_keys
            .into_iter()
            .enumerate()
            .map(|(i, key)| backends.ledger(i, chain.clone(), key))
            .collect::<Result<Vec<_>, _>>()?;
        let storage = (0..config.storage_nodes).map(|i| backends.storage(i)).collect::<Result<Vec<_>, _>>()?;

        let params = DpParams::new(config.epsilon).map_err(|e| SimError::Config(e.to_string()))?;
        let mut agents = Vec::with_capacity(config.num_agents);
        for (a, rng) in agent_rngs.iter_mut().enumerate() {
            let mut datasets = Vec::with_capacity(config.datasets_per_agent);
            for d in 0..config.datasets_per_agent {
                let mut generator = config.generator.clone();
                generator.user_label = format!("agent-{a}");
                let (trace, truth) = generate_synthetic(&generator, rng.gen()).map_err(|e| SimError::Config(e.to_string()))?;
                let (dataset, pseudonym) = anonymise(&trace, rng);
                let mut listing = prepare_listing(&dataset, &pseudonym, config.price, &params, rng)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                if config.corrupt(a, d) {
                    listing.ciphertext = encrypt_dataset(b"corrupted upload", &listing.key);
                    listing.metadata.content_id = sha256(&listing.ciphertext);
                    listing.metadata.size_bytes = listing.ciphertext.len() as u64;
                    listing.announce = Transaction::announce(listing.metadata.clone(), &pseudonym);
                }
                datasets.push(AgentDataset { listing, pseudonym, truth, acks: BTreeSet::new(), announced: false, revealed: false });
            }
            agents.push(AgentActor {
                home: a % config.validators,
                datasets,
                puts: BTreeMap::new(),
                started: false,
                scanned: 0,
                never_reveals: config.never_reveals(a),
            });
        }

        let mut world = Self {
            config,
            seed,
            net,
            validators,
            storage,
            agents,
            buyer: Buyer {
                key: buyer_key,
                phase: Phase::WaitListings,
                purchases: Vec::new(),
                budget_exhausted: false,
                analysis: None,
                analyzed: Vec::new(),
                disputes: Vec::new(),
            },
            observer: chain,
            first_seen: BTreeMap::new(),
            resolved_at: BTreeMap::new(),
            failed_gets: 0,
            rejected_txs: 0,
            protocol_errors: Vec::new(),
            invariant_violations: Vec::new(),
        };
        let b = config.block_interval;
        for i in 0..config.validators {
            world.net.timer(Actor::Validator(i), b);
        }
        for a in 0..config.num_agents {
            world.net.timer(Actor::Agent(a), 0);
        }
        world.net.timer(Actor::Buyer, b / 2);
        Ok(world)
    }

    /// Event loop; true when the buyer finished before `max_ticks`.
    fn run(&mut self) -> bool {
        while let Some(arrival) = self.net.next() {
            if self.net.tick > self.config.max_ticks {
                return false;
            }
            match arrival {
                Arrival::Timer(Actor::Validator(i)) => self.validator_tick(i),
                Arrival::Timer(Actor::Agent(a)) => self.agent_tick(a),
                Arrival::Timer(Actor::Buyer) => {
                    self.buyer_tick();
                    if self.buyer.phase == Phase::Done {
                        return true;
                    }
                }
                Arrival::Timer(Actor::Storage(_)) => {}
                Arrival::Message { id, from, to, payload } => self.deliver(id, from, to, payload),
                Arrival::Failed { id, from: Actor::Buyer } => self.get_finished(id, None),
                Arrival::Failed { .. } => {}
            }
        }
        false
    }

    fn error(&mut self, context: &str, e: impl std::fmt::Display) {
        self.protocol_errors.push(format!("tick {}: {context}: {e}", self.net.tick));
    }

    fn broadcast_tx(&mut self, from: Actor, tx: &Transaction) {
        for v in 0..self.validators.len() {
            self.net.send(from, Actor::Validator(v), Payload::SubmitTx(tx.clone()));
        }
    }

    fn observe(&mut self, block: crate::ledger::Block) {
        let height = block.height;
        if let Err(e) = self.observer.append(block) {
            self.invariant_violations.push(format!("block {height} rejected by observer: {e}"));
            return;
        }
        if let Err(e) = self.observer.state().check_invariants() {
            self.invariant_violations.push(format!("after block {height}: {e}"));
        }
        for (cid, buyer, state) in self.observer.state().escrows() {
            self.first_seen.entry((*cid, *buyer)).or_insert(height);
            if !matches!(state, EscrowState::Locked { .. }) {
                self.resolved_at.entry((*cid, *buyer)).or_insert(height);
            }
        }
    }

    fn validator_tick(&mut self, i: usize) {
        match self.validators[i].produce() {
            Ok(Some(block)) => {
                for peer in (0..self.validators.len()).filter(|&p| p != i) {
                    self.net.send(Actor::Validator(i), Actor::Validator(peer), Payload::Block(block.clone()));
                }
                self.observe(block);
            }
            Ok(None) => {}
            Err(e) => self.error(&format!("validator {i} produce"), e),
        }
        let next = self.net.tick + self.config.block_interval;
        self.net.timer(Actor::Validator(i), next);
    }

    fn deliver(&mut self, id: u64, from: Actor, to: Actor, payload: Payload) {
        match (to, payload) {
            (Actor::Validator(v), Payload::SubmitTx(tx)) => match self.validators[v].submit(tx) {
                Ok(_) | Err(LedgerError::DuplicateTx { .. }) => {}
                Err(LedgerError::Transport { reason }) => self.error(&format!("validator {v} submit"), reason),
                Err(_) => self.rejected_txs += 1,
            },
            (Actor::Validator(v), Payload::Block(block)) => {
                if let Err(e) = self.validators[v].receive_block(block) {
                    self.error(&format!("validator {v} receive block"), e);
                }
            }
            (Actor::Storage(s), Payload::Put(blob)) => {
                let stored = match self.storage[s].put_blob(&blob) {
                    Ok(id) => Some(id),
                    Err(e) => {
                        self.error(&format!("storage {s} put"), e);
                        None
                    }
                };
                self.net.send(to, from, Payload::PutResult { request: id, stored });
            }
            (Actor::Storage(s), Payload::Get(cid)) => {
                let blob = self.storage[s].get_blob(&cid).unwrap_or_else(|e| {
                    self.error(&format!("storage {s} get"), e);
                    None
                });
                self.net.send(to, from, Payload::GetResult { request: id, blob });
            }
            (Actor::Agent(a), Payload::PutResult { request, stored }) => self.put_acked(a, request, stored),
            (Actor::Buyer, Payload::GetResult { request, blob }) => self.get_finished(request, blob),
            (to, payload) => self.error("unexpected message", format!("{payload:?} to {to:?}")),
        }
    }

    fn agent_tick(&mut self, a: usize) {
        let me = Actor::Agent(a);
        let half = self.config.block_interval / 2;
        if !self.agents[a].started {
            self.agents[a].started = true;
            for d in 0..self.agents[a].datasets.len() {
                for node in 0..self.config.replication {
                    let blob = self.agents[a].datasets[d].listing.ciphertext.clone();
                    let id = self.net.send(me, Actor::Storage(node), Payload::Put(blob));
                    self.agents[a].puts.insert(id, (d, node));
                }
            }
            self.net.timer(me, self.net.tick + half.max(1));
            return;
        }
        let agent = &self.agents[a];
        match self.validators[agent.home].blocks_from(agent.scanned + 1) {
            Ok(blocks) => {
                let mut reveals = Vec::new();
                let agent = &mut self.agents[a];
                for block in &blocks {
                    agent.scanned = block.height;
                    for tx in &block.txs {
                        let Transaction::Purchase { content_id, .. } = tx else { continue };
                        if agent.never_reveals {
                            continue;
                        }
                        if let Some(ds) = agent.datasets.iter_mut().find(|d| d.listing.metadata.content_id == *content_id) {
                            if !ds.revealed {
                                ds.revealed = true;
                                reveals.push(Transaction::reveal(*content_id, ds.listing.key, &ds.pseudonym));
                            }
                        }
                    }
                }
                for tx in reveals {
                    self.broadcast_tx(me, &tx);
                }
            }
            Err(e) => self.error(&format!("agent {a} scan"), e),
        }
        self.net.timer(me, self.net.tick + self.config.block_interval);
    }

    fn put_acked(&mut self, a: usize, request: u64, stored: Option<ContentId>) {
        let Some((d, node)) = self.agents[a].puts.remove(&request) else { return };
        let ds = &mut self.agents[a].datasets[d];
        if stored != Some(ds.listing.metadata.content_id) {
            self.error(&format!("agent {a} put to storage {node}"), "content id mismatch");
            return;
        }
        ds.acks.insert(node);
        if ds.acks.len() == self.config.replication && !ds.announced {
            ds.announced = true;
            let tx = ds.listing.announce.clone();
            self.broadcast_tx(Actor::Agent(a), &tx);
        }
    }

    fn expected_listings(&self) -> usize {
        self.config.num_agents * self.config.datasets_per_agent
    }

    fn buyer_tick(&mut self) {
        let result = match self.buyer.phase {
            Phase::WaitListings => self.buyer_wait(),
            Phase::Settling => self.buyer_settle(),
            Phase::Done => Ok(()),
        };
        if let Err(e) = result {
            self.error("buyer", e);
        }
        if self.buyer.phase != Phase::Done {
            self.net.timer(Actor::Buyer, self.net.tick + self.config.block_interval);
        }
    }

    fn buyer_wait(&mut self) -> Result<(), LedgerError> {
        let home = &self.validators[0];
        let listings = home.listings()?;
        if listings.len() < self.expected_listings() && self.net.tick < self.config.listing_wait_ticks {
            return Ok(());
        }
        for node in self.config.down_nodes().collect::<Vec<_>>() {
            self.net.set_down(Actor::Storage(node));
        }
        let me = self.buyer.key.public();
        let deadline_height = home.status()?.height + self.config.escrow_deadline;
        let mut remaining = self.config.buyer_budget.min(home.balance(&me)?);
        for listing in listings {
            let price = listing.metadata.price;
            if price > remaining {
                self.buyer.budget_exhausted = true;
                break;
            }
            remaining -= price;
            let tx = Transaction::purchase(listing.content_id(), &self.buyer.key, price, deadline_height);
            self.broadcast_tx(Actor::Buyer, &tx);
            self.buyer.purchases.push(BuyerPurchase { listing, deadline_height, refund_sent: false, lapsed: false, fetch: Fetch::NotStarted });
        }
        self.buyer.phase = Phase::Settling;
        if self.buyer.purchases.is_empty() {
            self.buyer_analyze();
        }
        Ok(())
    }

    fn buyer_settle(&mut self) -> Result<(), LedgerError> {
        let me = self.buyer.key.public();
        let height = self.validators[0].status()?.height;
        let mut all_resolved = true;
        for p in 0..self.buyer.purchases.len() {
            let cid = self.buyer.purchases[p].listing.content_id();
            let state = self.validators[0].escrow(&cid, &me)?;
            let purchase = &mut self.buyer.purchases[p];
            let resolved = match state {
                Some(EscrowState::Settled) => {
                    if matches!(purchase.fetch, Fetch::NotStarted) {
                        let mut ids = BTreeSet::new();
                        for node in 0..self.storage.len() {
                            ids.insert(self.net.send(Actor::Buyer, Actor::Storage(node), Payload::Get(cid)));
                        }
                        self.buyer.purchases[p].fetch = Fetch::InFlight(ids);
                    }
                    matches!(self.buyer.purchases[p].fetch, Fetch::Got(_) | Fetch::Failed)
                }
                Some(EscrowState::Locked { deadline_height, .. }) => {
                    if height >= deadline_height && !purchase.refund_sent {
                        purchase.refund_sent = true;
                        let tx = Transaction::refund(cid, &self.buyer.key);
                        self.broadcast_tx(Actor::Buyer, &tx);
                    }
                    false
                }
                Some(EscrowState::Refunded) => true,
                None => {
                    // the purchase can no longer be included
                    purchase.lapsed |= height > purchase.deadline_height;
                    purchase.lapsed
                }
            };
            all_resolved &= resolved;
        }
        if all_resolved {
            self.buyer_analyze();
        }
        Ok(())
    }

    fn get_finished(&mut self, request: u64, blob: Option<Vec<u8>>) {
        for p in &mut self.buyer.purchases {
            let Fetch::InFlight(ids) = &mut p.fetch else { continue };
            if !ids.remove(&request) {
                continue;
            }
            let cid = p.listing.content_id();
            match blob {
                Some(bytes) if sha256(&bytes) == cid => p.fetch = Fetch::Got(bytes),
                _ if ids.is_empty() => {
                    p.fetch = Fetch::Failed;
                    self.failed_gets += 1;
                }
                _ => {}
            }
            return;
        }
    }

    fn buyer_analyze(&mut self) {
        self.buyer.phase = Phase::Done;
        let mut fetched = BTreeMap::new();
        let mut settled = Vec::new();
        for p in &mut self.buyer.purchases {
            match std::mem::replace(&mut p.fetch, Fetch::Failed) {
                Fetch::Got(bytes) => {
                    fetched.insert(p.listing.content_id(), bytes);
                    settled.push(p.listing.content_id());
                }
                Fetch::Failed => settled.push(p.listing.content_id()),
                other => p.fetch = other,
            }
        }
        let retrieval = match fetch_datasets(&self.validators[0], &Fetched(fetched), &settled) {
            Ok(r) => r,
            Err(e) => return self.error("buyer fetch", e),
        };
        self.buyer.analyzed = retrieval.datasets.iter().map(|(id, _)| *id).collect();
        self.buyer.disputes = retrieval.disputes;
        if retrieval.datasets.is_empty() {
            return;
        }
        let datasets: Vec<_> = retrieval.datasets.into_iter().map(|(_, d)| d).collect();
        match analyze(&datasets, &self.config.bdg, self.seed) {
            Ok(a) => self.buyer.analysis = Some(a),
            Err(e) => self.error("buyer analyze", e),
        }
    }

    fn finish(self, completed: bool) -> ScenarioRun {
        let state = self.observer.state();
        let buyer = self.buyer.key.public();
        let mut balances = BTreeMap::from([("buyer".to_string(), state.balance(&buyer))]);
        let mut escrows = Vec::new();
        let mut truth_of = BTreeMap::new();
        for (a, agent) in self.agents.iter().enumerate() {
            for (d, ds) in agent.datasets.iter().enumerate() {
                let cid = ds.listing.metadata.content_id;
                balances.insert(format!("agent{a}/dataset{d}"), state.balance(&ds.pseudonym.public()));
                truth_of.insert(cid, &ds.truth);
                let deadline_height = self
                    .buyer
                    .purchases
                    .iter()
                    .find(|p| p.listing.content_id() == cid)
                    .map(|p| p.deadline_height);
                escrows.push(EscrowOutcome {
                    agent: a,
                    dataset: d,
                    content_id: cid,
                    price: ds.listing.metadata.price,
                    state: state.escrow(&cid, &buyer),
                    purchase_height: self.first_seen.get(&(cid, buyer)).copied(),
                    deadline_height,
                    resolved_height: self.resolved_at.get(&(cid, buyer)).copied(),
                });
            }
        }
        let detection = self.buyer.analysis.as_ref().map(|analysis| {
            let truth: BTreeSet<String> =
                self.buyer.analyzed.iter().flat_map(|id| truth_of[id].tracker_domains.iter().cloned()).collect();
            DetectionScore::of(&analysis.report.tracker_domains(), &truth)
        });
        let validator_heights = self.validators.iter().map(|v| v.status().map_or(0, |s| s.height)).collect();
        let report = ScenarioReport {
            config_digest: sha256(&self.config.to_canonical_bytes()),
            seed: self.seed,
            completed,
            chain: ChainStatus { height: self.observer.height(), tip_hash: self.observer.tip().hash },
            validator_heights,
            buyer_initial_balance: self.config.buyer_funds,
            buyer_final_balance: state.balance(&buyer),
            balances,
            listings_published: state.list_datasets().len() as u64,
            purchases: self.buyer.purchases.len() as u64,
            budget_exhausted: self.buyer.budget_exhausted,
            escrows,
            analyzed: self.buyer.analyzed.clone(),
            disputes: self.buyer.disputes.clone(),
            detection,
            artifacts: self.buyer.analysis.as_ref().map(ArtifactDigests::of),
            failed_gets: self.failed_gets,
            rejected_txs: self.rejected_txs,
            network: self.net.stats,
            protocol_errors: self.protocol_errors,
            invariant_violations: self.invariant_violations,
            events: self.net.events,
            ticks: self.net.tick,
        };
        ScenarioRun { report, analysis: self.buyer.analysis }
    }
}
