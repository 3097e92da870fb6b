//! Lossy in-simulation network with acknowledged, deduplicated delivery and
//! bounded exponential-backoff retransmission.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::ContentId;
use crate::ledger::{Block, Transaction};

pub const MAX_ATTEMPTS: u32 = 32;
pub const MAX_BACKOFF_TICKS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Validator(usize),
    Storage(usize),
    Agent(usize),
    Buyer,
}

#[derive(Debug, Clone)]
pub enum Payload {
    SubmitTx(Transaction),
    Block(Block),
    Put(Vec<u8>),
    PutResult { request: u64, stored: Option<ContentId> },
    Get(ContentId),
    GetResult { request: u64, blob: Option<Vec<u8>> },
}

#[derive(Debug)]
pub enum Event {
    Deliver { id: u64, from: Actor, to: Actor, payload: Payload },
    Ack { id: u64 },
    Retransmit { id: u64 },
    Timer(Actor),
}

/// A message that was handed to its receiver for the first time, or a send
/// that ran out of retries.
#[derive(Debug)]
pub enum Arrival {
    Message { id: u64, from: Actor, to: Actor, payload: Payload },
    Failed { id: u64, from: Actor },
    Timer(Actor),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub messages: u64,
    pub transmissions: u64,
    pub dropped: u64,
    pub retransmissions: u64,
    pub delivery_failures: u64,
}

struct Outgoing {
    from: Actor,
    to: Actor,
    payload: Payload,
    attempts: u32,
}

pub struct Network {
    pub tick: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    rng: ChaCha8Rng,
    latency: u64,
    drop_probability: f64,
    next_id: u64,
    pending: BTreeMap<u64, Outgoing>,
    seen: BTreeSet<(Actor, u64)>,
    down: BTreeSet<Actor>,
    pub stats: NetStats,
    pub events: u64,
}

impl Network {
    pub fn new(rng: ChaCha8Rng, latency: u64, drop_probability: f64) -> Self {
        Self {
            tick: 0,
            seq: 0,
            queue: BTreeMap::new(),
            rng,
            latency,
            drop_probability,
            next_id: 0,
            pending: BTreeMap::new(),
            seen: BTreeSet::new(),
            down: BTreeSet::new(),
            stats: NetStats::default(),
            events: 0,
        }
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.queue.insert((at, self.seq), event);
        self.seq += 1;
    }

    pub fn timer(&mut self, actor: Actor, at: u64) {
        self.schedule(at, Event::Timer(actor));
    }

    pub fn set_down(&mut self, actor: Actor) {
        self.down.insert(actor);
    }

    fn lost(&mut self, a: Actor, b: Actor) -> bool {
        if self.down.contains(&a) || self.down.contains(&b) {
            return true;
        }
        if self.drop_probability > 0.0 && self.rng.gen::<f64>() < self.drop_probability {
            self.stats.dropped += 1;
            return true;
        }
        false
    }

    fn backoff(&self, attempts: u32) -> u64 {
        let base = 2 * self.latency + 1;
        base.saturating_mul(1 << (attempts - 1).min(16)).min(MAX_BACKOFF_TICKS.max(base))
    }

    fn transmit(&mut self, id: u64) {
        let Some(out) = self.pending.get(&id) else { return };
        let (from, to, payload) = (out.from, out.to, out.payload.clone());
        self.stats.transmissions += 1;
        if !self.lost(from, to) {
            self.schedule(self.tick + self.latency, Event::Deliver { id, from, to, payload });
        }
    }

    /// Queues a reliable send and returns its message id.
    pub fn send(&mut self, from: Actor, to: Actor, payload: Payload) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.messages += 1;
        self.pending.insert(id, Outgoing { from, to, payload, attempts: 1 });
        self.transmit(id);
        let at = self.tick + self.backoff(1);
        self.schedule(at, Event::Retransmit { id });
        id
    }

    /// Advances to the next event that matters to actors, handling acks and
    /// retransmissions internally. `None` once the queue is empty.
    pub fn next(&mut self) -> Option<Arrival> {
        loop {
            let ((tick, _), event) = self.queue.pop_first()?;
            self.tick = tick;
            self.events += 1;
            match event {
                Event::Timer(actor) => return Some(Arrival::Timer(actor)),
                Event::Ack { id } => {
                    self.pending.remove(&id);
                }
                Event::Retransmit { id } => {
                    let Some(out) = self.pending.get_mut(&id) else { continue };
                    if out.attempts >= MAX_ATTEMPTS {
                        let from = out.from;
                        self.pending.remove(&id);
                        self.stats.delivery_failures += 1;
                        return Some(Arrival::Failed { id, from });
                    }
                    out.attempts += 1;
                    let attempts = out.attempts;
                    self.stats.retransmissions += 1;
                    self.transmit(id);
                    let at = self.tick + self.backoff(attempts);
                    self.schedule(at, Event::Retransmit { id });
                }
                Event::Deliver { id, from, to, payload } => {
                    if !self.lost(to, from) {
                        self.schedule(self.tick + self.latency, Event::Ack { id });
                    }
                    if self.seen.insert((to, id)) {
                        return Some(Arrival::Message { id, from, to, payload });
                    }
                }
            }
        }
    }
}
