//! The IPPO agent: anonymises a browsing trace, noises its published
//! summary counts with the Laplace mechanism, encrypts it under a fresh key
//! and lists it on the marketplace under a fresh pseudonym.

use std::collections::BTreeSet;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::crypto::{keypair_hex, sha256, ContentId, Digest, Keypair, PublicKey};
use crate::ledger::{LedgerClient, LedgerError, Transaction};
use crate::storage::{StorageClient, StorageError};
use crate::trace::{BrowsingTrace, Device, PageVisit, QueryParam, QueryValue};

pub use crate::crypto::DataKey;

const MS_PER_DAY: u64 = 86_400_000;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("Laplace scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("uniform sample must lie in (0, 1), got {0}")]
    InvalidUniform(f64),
    #[error("authentication failed: wrong key or modified ciphertext")]
    Authentication,
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("storage returned content id {stored}, expected {expected}")]
    ContentIdMismatch { expected: ContentId, stored: ContentId },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Laplace mechanism parameters for unit-sensitivity counting queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub sensitivity: f64,
}

impl Default for DpParams {
    fn default() -> Self {
        Self { epsilon: 1.0, sensitivity: 1.0 }
    }
}

impl DpParams {
    pub fn new(epsilon: f64) -> Result<Self, AgentError> {
        let params = Self { epsilon, ..Self::default() };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let b = self.scale();
        if b.is_finite() && b > 0.0 && self.epsilon > 0.0 {
            Ok(())
        } else {
            Err(AgentError::InvalidScale(b))
        }
    }

    /// b = sensitivity / epsilon
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// Inverse-CDF Laplace(0, b) sample for a uniform `u` in (0, 1).
pub fn laplace_sample(b: f64, u: f64) -> Result<f64, AgentError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(AgentError::InvalidScale(b));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(AgentError::InvalidUniform(u));
    }
    let centered = u - 0.5;
    Ok(-b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln() + 0.0)
}

/// Uniform sample from the open interval (0, 1).
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Rounds and clamps a noised count. Post-processing only, so the privacy
/// guarantee of the noise carries over.
pub fn noisy_count(true_count: u64, noise: f64) -> u64 {
    let noised = (true_count as f64 + noise).round();
    if noised <= 0.0 {
        0
    } else {
        noised as u64
    }
}

pub fn dp_count<R: Rng + ?Sized>(true_count: u64, params: &DpParams, rng: &mut R) -> u64 {
    let noise = laplace_sample(params.scale(), uniform_open(rng)).expect("validated params, u in (0,1)");
    noisy_count(true_count, noise)
}

/// A trace prepared for sale: no user label, timestamps rebased to the first
/// visit, query values replaced by summaries, and no query strings in URLs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymisedDataset {
    pub pseudonym_pubkey: PublicKey,
    pub device: Device,
    pub visits: Vec<PageVisit>,
}

impl AnonymisedDataset {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        serde_json::from_slice(bytes).map_err(|e| AgentError::Dataset(e.to_string()))
    }

    pub fn first_parties(&self) -> BTreeSet<&str> {
        self.visits.iter().map(|v| v.first_party.as_str()).collect()
    }

    /// Whole days covered, counted from the first visit.
    pub fn day_span(&self) -> DaySpan {
        let end_ms = self
            .visits
            .iter()
            .map(|v| v.start_ts_ms + v.requests.iter().map(|r| r.ts_rel_ms + r.duration_ms).max().unwrap_or(0))
            .max()
            .unwrap_or(0);
        DaySpan { start_day: 0, end_day: end_ms / MS_PER_DAY }
    }
}

fn strip_query(url: &str) -> &str {
    url.split(['?', '#']).next().unwrap_or(url)
}

/// Anonymises `trace` under a freshly generated pseudonym, returned with the
/// dataset so the seller can later sign for it.
pub fn anonymise<R: RngCore + ?Sized>(trace: &BrowsingTrace, rng: &mut R) -> (AnonymisedDataset, Keypair) {
    let pseudonym = Keypair::generate(rng);
    let origin = trace.visits.first().map_or(0, |v| v.start_ts_ms);
    let visits = trace
        .visits
        .iter()
        .map(|visit| {
            let mut visit = visit.clone();
            visit.start_ts_ms -= origin;
            for request in &mut visit.requests {
                request.url = strip_query(&request.url).to_string();
                for QueryParam(_, value) in &mut request.query_params {
                    *value = QueryValue::Summary(value.summary());
                }
            }
            visit
        })
        .collect();
    let dataset = AnonymisedDataset { pseudonym_pubkey: pseudonym.public(), device: trace.device, visits };
    (dataset, pseudonym)
}

// Each key encrypts exactly one dataset, so the nonce is constant.
const NONCE: [u8; 12] = [0u8; 12];

pub fn encrypt_dataset(plaintext: &[u8], key: &DataKey) -> Vec<u8> {
    ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()))
        .encrypt(Nonce::from_slice(&NONCE), plaintext)
        .expect("plaintext below the AEAD length limit")
}

pub fn decrypt_dataset(ciphertext: &[u8], key: &DataKey) -> Result<Vec<u8>, AgentError> {
    ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()))
        .decrypt(Nonce::from_slice(&NONCE), ciphertext)
        .map_err(|_| AgentError::Authentication)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySpan {
    pub start_day: u64,
    pub end_day: u64,
}

/// What a seller publishes on chain about a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub content_id: ContentId,
    pub plaintext_digest: Digest,
    pub key_commitment: Digest,
    pub price: u64,
    pub epsilon: f64,
    pub noised_visit_count: u64,
    pub noised_first_party_count: u64,
    pub day_span: DaySpan,
    pub size_bytes: u64,
}

pub fn build_metadata<R: Rng + ?Sized>(
    dataset: &AnonymisedDataset,
    ciphertext: &[u8],
    key: &DataKey,
    price: u64,
    params: &DpParams,
    rng: &mut R,
) -> DatasetMetadata {
    DatasetMetadata {
        content_id: sha256(ciphertext),
        plaintext_digest: sha256(&dataset.to_canonical_bytes()),
        key_commitment: key.commitment(),
        price,
        epsilon: params.epsilon,
        noised_visit_count: dp_count(dataset.visits.len() as u64, params, rng),
        noised_first_party_count: dp_count(dataset.first_parties().len() as u64, params, rng),
        day_span: dataset.day_span(),
        size_bytes: ciphertext.len() as u64,
    }
}

/// Ciphertext, key and signed announcement for one dataset, ready to be
/// stored and submitted.
#[derive(Debug, Clone)]
pub struct PreparedListing {
    pub ciphertext: Vec<u8>,
    pub key: DataKey,
    pub metadata: DatasetMetadata,
    pub announce: Transaction,
}

pub fn prepare_listing<R: RngCore + ?Sized>(
    dataset: &AnonymisedDataset,
    pseudonym: &Keypair,
    price: u64,
    params: &DpParams,
    rng: &mut R,
) -> Result<PreparedListing, AgentError> {
    params.validate()?;
    let key = DataKey::generate(rng);
    let ciphertext = encrypt_dataset(&dataset.to_canonical_bytes(), &key);
    let metadata = build_metadata(dataset, &ciphertext, &key, price, params, rng);
    let announce = Transaction::announce(metadata.clone(), pseudonym);
    Ok(PreparedListing { ciphertext, key, metadata, announce })
}

/// The seller's local record of a published dataset, including the secrets
/// needed to reveal the key and remove the blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publication {
    pub content_id: ContentId,
    pub announce_txid: Digest,
    pub metadata: DatasetMetadata,
    pub key: DataKey,
    #[serde(with = "keypair_hex")]
    pub pseudonym: Keypair,
}

impl Publication {
    pub fn reveal_tx(&self) -> Transaction {
        Transaction::reveal(self.content_id, self.key, &self.pseudonym)
    }
}

/// Stores the ciphertext, then submits the announcement. A storage failure
/// leaves nothing on the ledger.
pub fn publish<S, L, R>(
    dataset: &AnonymisedDataset,
    pseudonym: &Keypair,
    price: u64,
    params: &DpParams,
    storage: &mut S,
    ledger: &mut L,
    rng: &mut R,
) -> Result<Publication, AgentError>
where
    S: StorageClient + ?Sized,
    L: LedgerClient + ?Sized,
    R: RngCore + ?Sized,
{
    let listing = prepare_listing(dataset, pseudonym, price, params, rng)?;
    let stored = storage.put(&listing.ciphertext)?;
    if stored != listing.metadata.content_id {
        return Err(AgentError::ContentIdMismatch { expected: listing.metadata.content_id, stored });
    }
    let announce_txid = ledger.submit(listing.announce)?;
    Ok(Publication {
        content_id: stored,
        announce_txid,
        metadata: listing.metadata,
        key: listing.key,
        pseudonym: pseudonym.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_synthetic, GeneratorConfig, ValueSummary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn laplace_inverse_cdf_values() {
        assert_eq!(laplace_sample(1.0, 0.5).unwrap(), 0.0);
        assert!(close(laplace_sample(1.0, 0.75).unwrap(), std::f64::consts::LN_2));
        assert!(close(laplace_sample(2.0, 0.25).unwrap(), -2.0 * std::f64::consts::LN_2));
        assert!(matches!(laplace_sample(0.0, 0.3), Err(AgentError::InvalidScale(_))));
        assert!(matches!(laplace_sample(-1.0, 0.3), Err(AgentError::InvalidScale(_))));
        assert!(matches!(laplace_sample(1.0, 0.0), Err(AgentError::InvalidUniform(_))));
        assert!(matches!(laplace_sample(1.0, 1.0), Err(AgentError::InvalidUniform(_))));
    }

    #[test]
    fn counts_round_and_clamp() {
        assert_eq!(noisy_count(7, laplace_sample(1.0, 0.5).unwrap()), 7);
        assert_eq!(noisy_count(10, -12.4), 0);
        assert_eq!(noisy_count(10, 0.6), 11);
        assert_eq!(noisy_count(12, 0.0), 12);
        assert!(DpParams::new(0.0).is_err());
        assert_eq!(DpParams::new(0.5).unwrap().scale(), 2.0);
    }

    fn trace() -> BrowsingTrace {
        let mut config = GeneratorConfig::desk_scale(3, 2);
        config.first_parties = 6;
        config.user_label = "alice-laptop-7731".into();
        for t in &mut config.trackers {
            t.prevalence = 3;
        }
        generate_synthetic(&config, 5).unwrap().0
    }

    #[test]
    fn anonymise_redacts_identity_time_and_values() {
        let trace = trace();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (dataset, pseudonym) = anonymise(&trace, &mut rng);
        assert_eq!(dataset.pseudonym_pubkey, pseudonym.public());
        let bytes = dataset.to_canonical_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(!text.contains("alice-laptop-7731"));
        assert!(!text.contains("user_label"));
        for visit in &trace.visits {
            assert!(!text.contains(&visit.start_ts_ms.to_string()));
        }
        assert!(!text.contains('?'));
        assert_eq!(dataset.visits[0].start_ts_ms, 0);
        for (a, b) in dataset.visits.iter().zip(&trace.visits) {
            assert_eq!(a.start_ts_ms, b.start_ts_ms - trace.visits[0].start_ts_ms);
            for (ra, rb) in a.requests.iter().zip(&b.requests) {
                assert_eq!((ra.ts_rel_ms, ra.duration_ms, ra.bytes_in), (rb.ts_rel_ms, rb.duration_ms, rb.bytes_in));
                assert!(ra.query_params.iter().all(|QueryParam(_, v)| matches!(v, QueryValue::Summary(_))));
            }
        }
        assert_eq!(AnonymisedDataset::from_bytes(&bytes).unwrap(), dataset);
    }

    #[test]
    fn fresh_pseudonym_per_call() {
        let trace = trace();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, _) = anonymise(&trace, &mut rng);
        let (b, _) = anonymise(&trace, &mut rng);
        assert_ne!(a.pseudonym_pubkey, b.pseudonym_pubkey);
    }

    #[test]
    fn query_value_summary() {
        assert_eq!(QueryValue::Raw("abcd1234".into()).summary(), ValueSummary { length: 8, entropy_bits_per_char: 3.0 });
    }

    #[test]
    fn aead_round_trip_and_tamper_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut plaintext = vec![0u8; 1 << 20];
        rng.fill_bytes(&mut plaintext);
        let key = DataKey::generate(&mut rng);
        let ct = encrypt_dataset(&plaintext, &key);
        assert_eq!(decrypt_dataset(&ct, &key).unwrap(), plaintext);
        assert!(matches!(decrypt_dataset(&ct, &DataKey::generate(&mut rng)), Err(AgentError::Authentication)));
        let mut flipped = ct.clone();
        flipped[1234] ^= 1;
        assert!(matches!(decrypt_dataset(&flipped, &key), Err(AgentError::Authentication)));
    }

    #[test]
    fn metadata_hashes() {
        let dataset = AnonymisedDataset { pseudonym_pubkey: PublicKey([1; 32]), device: Device::Desktop, visits: vec![] };
        let zero = DataKey([0; 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let meta = build_metadata(&dataset, b"", &zero, 5, &DpParams::default(), &mut rng);
        assert_eq!(meta.content_id.to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        // SHA-256 of 32 zero bytes, as computed by coreutils `sha256sum`
        assert_eq!(meta.key_commitment.to_hex(), "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925");
        assert_eq!(meta.plaintext_digest, sha256(&dataset.to_canonical_bytes()));
        assert_eq!(meta.size_bytes, 0);
    }

    #[test]
    fn zero_noise_keeps_visit_count() {
        let trace = trace();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (dataset, _) = anonymise(&trace, &mut rng);
        let visits = dataset.visits.len() as u64;
        assert_eq!(visits, 12);
        assert_eq!(noisy_count(visits, laplace_sample(1.0, 0.5).unwrap()), 12);
    }
}
