use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    compute_features, compute_metrics_for_visits, detect, generate_ruleset, privacy_factor, BdgConfig, BdgError,
    PrivacyFactor, PrivacyLabel, RuleSet, TrackerReport,
};
use crate::agent::{decrypt_dataset, AnonymisedDataset};
use crate::crypto::{sha256, ContentId, Digest, Keypair, PublicKey};
use crate::ledger::{EscrowState, LedgerClient, LedgerError, Transaction};
use crate::storage::StorageClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub content_id: ContentId,
    pub price: u64,
    pub txid: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DisputeReason {
    StorageUnavailable { detail: String },
    DecryptionFailed,
    DigestMismatch,
    Malformed { detail: String },
}

/// A paid-for dataset that could not be used. Payment is not reversed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispute {
    pub content_id: ContentId,
    pub seller: PublicKey,
    #[serde(flatten)]
    pub reason: DisputeReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub datasets: Vec<(ContentId, AnonymisedDataset)>,
    pub disputes: Vec<Dispute>,
    /// Bought but not yet revealed.
    pub pending: Vec<ContentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub report: TrackerReport,
    pub labels: Vec<PrivacyLabel>,
    pub factors: Vec<PrivacyFactor>,
    pub ruleset: RuleSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub purchases: Vec<Purchase>,
    /// Some listing was left unbought for lack of budget or balance.
    pub budget_exhausted: bool,
    pub retrieval: Retrieval,
    pub analysis: Analysis,
}

/// Buys listings in announce order, stopping at the first one the remaining
/// budget (capped by the balance) cannot cover. Own listings and ones the
/// buyer already holds an escrow for are skipped.
pub fn purchase_listings<L: LedgerClient + ?Sized>(
    ledger: &mut L,
    buyer: &Keypair,
    budget: u64,
    deadline_blocks: u64,
) -> Result<(Vec<Purchase>, bool), BdgError> {
    let listings = ledger.listings()?;
    if listings.is_empty() {
        return Err(BdgError::NoListings);
    }
    let me = buyer.public();
    let deadline_height = ledger.status()?.height + deadline_blocks;
    let mut remaining = budget.min(ledger.balance(&me)?);
    let mut purchases = Vec::new();
    for listing in listings {
        let content_id = listing.content_id();
        if listing.seller == me || ledger.escrow(&content_id, &me)?.is_some() {
            continue;
        }
        let price = listing.metadata.price;
        if price > remaining {
            return Ok((purchases, true));
        }
        let txid = ledger.submit(Transaction::purchase(content_id, buyer, price, deadline_height))?;
        remaining -= price;
        purchases.push(Purchase { content_id, price, txid });
    }
    Ok((purchases, false))
}

/// Content ids the buyer holds a live or settled escrow for, in announce order.
pub fn purchased_content<L: LedgerClient + ?Sized>(ledger: &L, buyer: &PublicKey) -> Result<Vec<ContentId>, BdgError> {
    let mut out = Vec::new();
    for listing in ledger.listings()? {
        let id = listing.content_id();
        if matches!(ledger.escrow(&id, buyer)?, Some(EscrowState::Settled | EscrowState::Locked { .. })) {
            out.push(id);
        }
    }
    Ok(out)
}

/// Fetches, decrypts and checks each dataset against its announced digest.
pub fn fetch_datasets<L, S>(ledger: &L, storage: &S, content_ids: &[ContentId]) -> Result<Retrieval, BdgError>
where
    L: LedgerClient + ?Sized,
    S: StorageClient + ?Sized,
{
    let listings: BTreeMap<ContentId, _> = ledger.listings()?.into_iter().map(|l| (l.content_id(), l)).collect();
    let mut out = Retrieval::default();
    for &content_id in content_ids {
        let listing = listings.get(&content_id).ok_or(LedgerError::UnknownDataset { content_id })?;
        let key = match ledger.key(&content_id) {
            Ok(key) => key,
            Err(LedgerError::KeyNotAvailable { .. }) => {
                out.pending.push(content_id);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let dispute = |reason| Dispute { content_id, seller: listing.seller, reason };
        let ciphertext = match storage.get(&content_id) {
            Ok(c) => c,
            Err(e) => {
                out.disputes.push(dispute(DisputeReason::StorageUnavailable { detail: e.to_string() }));
                continue;
            }
        };
        let Ok(plaintext) = decrypt_dataset(&ciphertext, &key) else {
            out.disputes.push(dispute(DisputeReason::DecryptionFailed));
            continue;
        };
        if sha256(&plaintext) != listing.metadata.plaintext_digest {
            out.disputes.push(dispute(DisputeReason::DigestMismatch));
            continue;
        }
        match AnonymisedDataset::from_bytes(&plaintext) {
            Ok(d) => out.datasets.push((content_id, d)),
            Err(e) => out.disputes.push(dispute(DisputeReason::Malformed { detail: e.to_string() })),
        }
    }
    Ok(out)
}

/// Detection, labels, factors and rule-set over the given datasets.
pub fn analyze(datasets: &[AnonymisedDataset], config: &BdgConfig, seed: u64) -> Result<Analysis, BdgError> {
    config.validate()?;
    let features = compute_features(datasets);
    let report = if datasets.is_empty() {
        TrackerReport { method: config.method, domains: BTreeMap::new(), degenerate: false }
    } else {
        detect(&features, config, seed)?
    };
    let trackers = report.tracker_domains();
    let labels = compute_metrics_for_visits(datasets.iter().flat_map(|d| &d.visits), &trackers, &config.energy)
        .into_iter()
        .map(|m| PrivacyLabel::new(m, &config.grades))
        .collect();
    let factors = privacy_factor(datasets, &trackers, &config.factor);
    let ruleset = generate_ruleset(&report);
    Ok(Analysis { report, labels, factors, ruleset })
}

/// Submits refunds for every escrow of `buyer` whose deadline has passed.
pub fn refund_expired<L: LedgerClient + ?Sized>(ledger: &mut L, buyer: &Keypair) -> Result<Vec<ContentId>, BdgError> {
    let height = ledger.status()?.height;
    let me = buyer.public();
    let mut refunded = Vec::new();
    for listing in ledger.listings()? {
        let id = listing.content_id();
        if let Some(EscrowState::Locked { deadline_height, .. }) = ledger.escrow(&id, &me)? {
            // the refund lands in block height+1 at the earliest
            if height >= deadline_height {
                match ledger.submit(Transaction::refund(id, buyer)) {
                    Ok(_) | Err(LedgerError::DuplicateTx { .. }) => refunded.push(id),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(refunded)
}

/// Purchase, let `settle` drive the chain until sellers had a chance to
/// reveal, then fetch and analyse whatever was delivered.
#[allow(clippy::too_many_arguments)]
pub fn acquire_and_analyze<L, S, F>(
    ledger: &mut L,
    storage: &S,
    buyer: &Keypair,
    budget: u64,
    deadline_blocks: u64,
    config: &BdgConfig,
    seed: u64,
    mut settle: F,
) -> Result<Acquisition, BdgError>
where
    L: LedgerClient + ?Sized,
    S: StorageClient + ?Sized,
    F: FnMut(&mut L) -> Result<(), BdgError>,
{
    let (purchases, budget_exhausted) = purchase_listings(ledger, buyer, budget, deadline_blocks)?;
    settle(ledger)?;
    let ids: Vec<ContentId> = purchases.iter().map(|p| p.content_id).collect();
    let retrieval = fetch_datasets(ledger, storage, &ids)?;
    let datasets: Vec<AnonymisedDataset> = retrieval.datasets.iter().map(|(_, d)| d.clone()).collect();
    let analysis = analyze(&datasets, config, seed)?;
    Ok(Acquisition { purchases, budget_exhausted, retrieval, analysis })
}
