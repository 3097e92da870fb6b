//! Proof-of-authority ledger with accounts, dataset announcements and the
//! commit-reveal escrow contract for selling dataset keys.

mod chain;
mod node;
mod state;
mod tx;

use serde::{Deserialize, Serialize};

use crate::agent::DataKey;
use crate::crypto::{ContentId, Digest, PublicKey};

pub use chain::{validate_chain, Block, Chain, ChainError, ChainFault};
pub use node::{LedgerNode, ValidatorBackend};
pub use state::{apply_tx, EscrowState, LedgerState, Listing, ListingStatus};
pub use tx::Transaction;

/// Blocks a buyer waits for a reveal before a refund becomes possible.
pub const DEFAULT_ESCROW_DEADLINE: u64 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum LedgerError {
    #[error("unknown dataset {content_id}")]
    UnknownDataset { content_id: ContentId },
    #[error("insufficient balance: need {needed}, have {available}")]
    InsufficientBalance { needed: u64, available: u64 },
    #[error("revealed key does not match the commitment of {content_id}")]
    CommitmentMismatch { content_id: ContentId },
    #[error("refund requested at height {height}, deadline is {deadline_height}")]
    RefundBeforeDeadline { deadline_height: u64, height: u64 },
    #[error("escrow for {content_id} already settled or refunded")]
    DoubleSettle { content_id: ContentId },
    #[error("dataset {content_id} already announced")]
    DuplicateAnnounce { content_id: ContentId },
    #[error("signature does not verify against the acting party")]
    BadSignature,
    #[error("purchase amount {amount} differs from listed price {price}")]
    PriceMismatch { price: u64, amount: u64 },
    #[error("buyer already purchased {content_id}")]
    AlreadyPurchased { content_id: ContentId },
    #[error("transaction {txid} already known")]
    DuplicateTx { txid: Digest },
    #[error("no escrow for {content_id} and this buyer")]
    NoEscrow { content_id: ContentId },
    #[error("deadline {deadline_height} is before height {height}")]
    DeadlineInPast { deadline_height: u64, height: u64 },
    #[error("key for {content_id} has not been revealed")]
    KeyNotAvailable { content_id: ContentId },
    #[error("{found} is not the scheduled proposer for height {height}")]
    WrongProposer { height: u64, found: PublicKey },
    #[error("token amount overflow")]
    Overflow,
    #[error("invalid block: {error}")]
    InvalidBlock { error: ChainError },
    #[error("ledger unreachable: {reason}")]
    Transport { reason: String },
}

impl LedgerError {
    /// Stable machine-readable error code (the `code` tag on the wire).
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::UnknownDataset { .. } => "unknown_dataset",
            LedgerError::InsufficientBalance { .. } => "insufficient_balance",
            LedgerError::CommitmentMismatch { .. } => "commitment_mismatch",
            LedgerError::RefundBeforeDeadline { .. } => "refund_before_deadline",
            LedgerError::DoubleSettle { .. } => "double_settle",
            LedgerError::DuplicateAnnounce { .. } => "duplicate_announce",
            LedgerError::BadSignature => "bad_signature",
            LedgerError::PriceMismatch { .. } => "price_mismatch",
            LedgerError::AlreadyPurchased { .. } => "already_purchased",
            LedgerError::DuplicateTx { .. } => "duplicate_tx",
            LedgerError::NoEscrow { .. } => "no_escrow",
            LedgerError::DeadlineInPast { .. } => "deadline_in_past",
            LedgerError::KeyNotAvailable { .. } => "key_not_available",
            LedgerError::WrongProposer { .. } => "wrong_proposer",
            LedgerError::Overflow => "overflow",
            LedgerError::InvalidBlock { .. } => "invalid_block",
            LedgerError::Transport { .. } => "transport",
        }
    }
}

impl From<ChainError> for LedgerError {
    fn from(error: ChainError) -> Self {
        LedgerError::InvalidBlock { error }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub height: u64,
    pub tip_hash: Digest,
}

/// Read and submit access to a ledger node, in-process or over the wire.
pub trait LedgerClient {
    fn submit(&mut self, tx: Transaction) -> Result<Digest, LedgerError>;
    /// Announcements in announce order.
    fn listings(&self) -> Result<Vec<Listing>, LedgerError>;
    fn key(&self, content_id: &ContentId) -> Result<DataKey, LedgerError>;
    fn balance(&self, account: &PublicKey) -> Result<u64, LedgerError>;
    fn escrow(&self, content_id: &ContentId, buyer: &PublicKey) -> Result<Option<EscrowState>, LedgerError>;
    fn status(&self) -> Result<ChainStatus, LedgerError>;
    fn blocks_from(&self, height: u64) -> Result<Vec<Block>, LedgerError>;
}

impl<T: LedgerClient + ?Sized> LedgerClient for Box<T> {
    fn submit(&mut self, tx: Transaction) -> Result<Digest, LedgerError> {
        (**self).submit(tx)
    }
    fn listings(&self) -> Result<Vec<Listing>, LedgerError> {
        (**self).listings()
    }
    fn key(&self, content_id: &ContentId) -> Result<DataKey, LedgerError> {
        (**self).key(content_id)
    }
    fn balance(&self, account: &PublicKey) -> Result<u64, LedgerError> {
        (**self).balance(account)
    }
    fn escrow(&self, content_id: &ContentId, buyer: &PublicKey) -> Result<Option<EscrowState>, LedgerError> {
        (**self).escrow(content_id, buyer)
    }
    fn status(&self) -> Result<ChainStatus, LedgerError> {
        (**self).status()
    }
    fn blocks_from(&self, height: u64) -> Result<Vec<Block>, LedgerError> {
        (**self).blocks_from(height)
    }
}
