use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LedgerError, Transaction};
use crate::agent::{DataKey, DatasetMetadata};
use crate::crypto::{sha256, ContentId, Digest, PublicKey};
use crate::storage::AnnouncerLookup;

/// Per (dataset, buyer) escrow. `Settled` and `Refunded` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EscrowState {
    Locked { amount: u64, deadline_height: u64 },
    Settled,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ListingStatus {
    Listed,
    Revealed { key: DataKey },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub metadata: DatasetMetadata,
    pub seller: PublicKey,
    pub announce_txid: Digest,
    pub status: ListingStatus,
}

impl Listing {
    pub fn content_id(&self) -> ContentId {
        self.metadata.content_id
    }

    pub fn revealed_key(&self) -> Option<&DataKey> {
        match &self.status {
            ListingStatus::Revealed { key } => Some(key),
            ListingStatus::Listed => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LedgerState {
    balances: BTreeMap<PublicKey, u64>,
    listings: Vec<Listing>,
    listing_index: BTreeMap<ContentId, usize>,
    escrows: BTreeMap<(ContentId, PublicKey), EscrowState>,
    /// Mint and transfer txids already applied; other variants are
    /// protected from replay by the escrow state machine.
    replay_guard: BTreeSet<Digest>,
    total_minted: u64,
}

/// Functional form of [`LedgerState::apply`].
pub fn apply_tx(state: &LedgerState, tx: &Transaction, height: u64) -> Result<LedgerState, LedgerError> {
    let mut next = state.clone();
    next.apply(tx, height)?;
    Ok(next)
}

fn credit(balance: u64, amount: u64) -> Result<u64, LedgerError> {
    balance.checked_add(amount).ok_or(LedgerError::Overflow)
}

impl LedgerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn balance(&self, account: &PublicKey) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<PublicKey, u64> {
        &self.balances
    }

    pub fn total_minted(&self) -> u64 {
        self.total_minted
    }

    /// Announcements in announce order.
    pub fn list_datasets(&self) -> &[Listing] {
        &self.listings
    }

    pub fn listing(&self, content_id: &ContentId) -> Option<&Listing> {
        self.listing_index.get(content_id).map(|&i| &self.listings[i])
    }

    pub fn get_key(&self, content_id: &ContentId) -> Result<DataKey, LedgerError> {
        let listing = self
            .listing(content_id)
            .ok_or(LedgerError::UnknownDataset { content_id: *content_id })?;
        listing.revealed_key().copied().ok_or(LedgerError::KeyNotAvailable { content_id: *content_id })
    }

    pub fn escrow(&self, content_id: &ContentId, buyer: &PublicKey) -> Option<EscrowState> {
        self.escrows.get(&(*content_id, *buyer)).copied()
    }

    pub fn escrows(&self) -> impl Iterator<Item = (&ContentId, &PublicKey, &EscrowState)> {
        self.escrows.iter().map(|((c, b), s)| (c, b, s))
    }

    pub fn locked_total(&self) -> u64 {
        self.escrows
            .values()
            .map(|s| match s {
                EscrowState::Locked { amount, .. } => *amount,
                _ => 0,
            })
            .sum()
    }

    /// Applies `tx` as part of the block at `height`. On error the state is
    /// left untouched.
    pub fn apply(&mut self, tx: &Transaction, height: u64) -> Result<(), LedgerError> {
        match tx {
            Transaction::Mint { to, amount, .. } => {
                let txid = self.fresh_txid(tx)?;
                let total = credit(self.total_minted, *amount)?;
                let balance = credit(self.balance(to), *amount)?;
                self.total_minted = total;
                self.balances.insert(*to, balance);
                self.replay_guard.insert(txid);
            }
            Transaction::Transfer { from, to, amount, .. } => {
                if !tx.verify_signature(from) {
                    return Err(LedgerError::BadSignature);
                }
                let txid = self.fresh_txid(tx)?;
                let available = self.balance(from);
                if available < *amount {
                    return Err(LedgerError::InsufficientBalance { needed: *amount, available });
                }
                if from != to {
                    let to_balance = credit(self.balance(to), *amount)?;
                    self.balances.insert(*from, available - amount);
                    self.balances.insert(*to, to_balance);
                }
                self.replay_guard.insert(txid);
            }
            Transaction::Announce { metadata, seller_pubkey, .. } => {
                if !tx.verify_signature(seller_pubkey) {
                    return Err(LedgerError::BadSignature);
                }
                let content_id = metadata.content_id;
                if self.listing_index.contains_key(&content_id) {
                    return Err(LedgerError::DuplicateAnnounce { content_id });
                }
                self.listing_index.insert(content_id, self.listings.len());
                self.listings.push(Listing {
                    metadata: metadata.clone(),
                    seller: *seller_pubkey,
                    announce_txid: tx.txid(),
                    status: ListingStatus::Listed,
                });
            }
            Transaction::Purchase { content_id, buyer_pubkey, amount, deadline_height, .. } => {
                if !tx.verify_signature(buyer_pubkey) {
                    return Err(LedgerError::BadSignature);
                }
                let listing = self
                    .listing(content_id)
                    .ok_or(LedgerError::UnknownDataset { content_id: *content_id })?;
                if self.escrows.contains_key(&(*content_id, *buyer_pubkey)) {
                    return Err(LedgerError::AlreadyPurchased { content_id: *content_id });
                }
                if *amount != listing.metadata.price {
                    return Err(LedgerError::PriceMismatch { price: listing.metadata.price, amount: *amount });
                }
                let available = self.balance(buyer_pubkey);
                if available < *amount {
                    return Err(LedgerError::InsufficientBalance { needed: *amount, available });
                }
                if *deadline_height < height {
                    return Err(LedgerError::DeadlineInPast { deadline_height: *deadline_height, height });
                }
                let seller = listing.seller;
                let escrow = if listing.revealed_key().is_some() {
                    // key already public: pay the seller straight away. Debit
                    // first so a seller buying its own listing nets to zero.
                    self.balances.insert(*buyer_pubkey, available - amount);
                    let seller_balance = credit(self.balance(&seller), *amount)?;
                    self.balances.insert(seller, seller_balance);
                    EscrowState::Settled
                } else {
                    self.balances.insert(*buyer_pubkey, available - amount);
                    EscrowState::Locked { amount: *amount, deadline_height: *deadline_height }
                };
                self.escrows.insert((*content_id, *buyer_pubkey), escrow);
            }
            Transaction::Reveal { content_id, key, .. } => {
                let &index = self
                    .listing_index
                    .get(content_id)
                    .ok_or(LedgerError::UnknownDataset { content_id: *content_id })?;
                let listing = &self.listings[index];
                if !tx.verify_signature(&listing.seller) {
                    return Err(LedgerError::BadSignature);
                }
                if listing.revealed_key().is_some() {
                    return Err(LedgerError::DoubleSettle { content_id: *content_id });
                }
                if sha256(key.as_bytes()) != listing.metadata.key_commitment {
                    return Err(LedgerError::CommitmentMismatch { content_id: *content_id });
                }
                let seller = listing.seller;
                let locked: Vec<(PublicKey, u64)> = self
                    .escrows
                    .range((*content_id, PublicKey([0; 32]))..=(*content_id, PublicKey([0xff; 32])))
                    .filter_map(|((_, buyer), s)| match s {
                        EscrowState::Locked { amount, .. } => Some((*buyer, *amount)),
                        _ => None,
                    })
                    .collect();
                let payout = locked.iter().try_fold(0u64, |acc, (_, a)| credit(acc, *a))?;
                let seller_balance = credit(self.balance(&seller), payout)?;
                self.balances.insert(seller, seller_balance);
                for (buyer, _) in locked {
                    self.escrows.insert((*content_id, buyer), EscrowState::Settled);
                }
                self.listings[index].status = ListingStatus::Revealed { key: *key };
            }
            Transaction::Refund { content_id, buyer_pubkey, .. } => {
                if !tx.verify_signature(buyer_pubkey) {
                    return Err(LedgerError::BadSignature);
                }
                let slot = (*content_id, *buyer_pubkey);
                match self.escrows.get(&slot) {
                    None => return Err(LedgerError::NoEscrow { content_id: *content_id }),
                    Some(EscrowState::Locked { amount, deadline_height }) => {
                        if height <= *deadline_height {
                            return Err(LedgerError::RefundBeforeDeadline {
                                deadline_height: *deadline_height,
                                height,
                            });
                        }
                        let balance = credit(self.balance(buyer_pubkey), *amount)?;
                        self.balances.insert(*buyer_pubkey, balance);
                        self.escrows.insert(slot, EscrowState::Refunded);
                    }
                    Some(_) => return Err(LedgerError::DoubleSettle { content_id: *content_id }),
                }
            }
        }
        Ok(())
    }

    fn fresh_txid(&self, tx: &Transaction) -> Result<Digest, LedgerError> {
        let txid = tx.txid();
        if self.replay_guard.contains(&txid) {
            return Err(LedgerError::DuplicateTx { txid });
        }
        Ok(txid)
    }

    /// Token conservation and fair-exchange safety.
    pub fn check_invariants(&self) -> Result<(), String> {
        let held: u128 = self.balances.values().map(|&b| b as u128).sum::<u128>() + self.locked_total() as u128;
        if held != self.total_minted as u128 {
            return Err(format!("conservation: balances+locked={held}, minted={}", self.total_minted));
        }
        for ((content_id, buyer), escrow) in &self.escrows {
            let Some(listing) = self.listing(content_id) else {
                return Err(format!("escrow for unlisted dataset {content_id}"));
            };
            if *escrow == EscrowState::Settled {
                match listing.revealed_key() {
                    Some(key) if sha256(key.as_bytes()) == listing.metadata.key_commitment => {}
                    _ => {
                        return Err(format!(
                            "safety: seller paid by {buyer} for {content_id} without a key preimage on chain"
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

impl AnnouncerLookup for LedgerState {
    fn announcer(&self, id: &ContentId) -> Option<PublicKey> {
        self.listing(id).map(|l| l.seller)
    }
}
