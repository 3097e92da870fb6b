use serde::{Deserialize, Serialize};

use crate::agent::{DataKey, DatasetMetadata};
use crate::canonical;
use crate::crypto::{ContentId, Digest, Keypair, PublicKey, Signature};

/// Ledger transaction. `txid` is the SHA-256 of the canonical JSON form; the
/// signature covers the canonical form without the `sig` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transaction {
    Mint {
        to: PublicKey,
        amount: u64,
        nonce: u64,
    },
    Transfer {
        from: PublicKey,
        to: PublicKey,
        amount: u64,
        nonce: u64,
        sig: Signature,
    },
    Announce {
        metadata: DatasetMetadata,
        seller_pubkey: PublicKey,
        sig: Signature,
    },
    Purchase {
        content_id: ContentId,
        buyer_pubkey: PublicKey,
        amount: u64,
        deadline_height: u64,
        sig: Signature,
    },
    Reveal {
        content_id: ContentId,
        key: DataKey,
        sig: Signature,
    },
    Refund {
        content_id: ContentId,
        buyer_pubkey: PublicKey,
        sig: Signature,
    },
}

const UNSIGNED: Signature = Signature([0u8; 64]);

impl Transaction {
    pub fn txid(&self) -> Digest {
        canonical::digest(self)
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut value = canonical::to_value(self);
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("sig");
        }
        let mut out = b"ippo-tx-v1:".to_vec();
        out.extend(serde_json::to_vec(&value).expect("json values always serialize"));
        out
    }

    pub fn signature(&self) -> Option<&Signature> {
        match self {
            Transaction::Mint { .. } => None,
            Transaction::Transfer { sig, .. }
            | Transaction::Announce { sig, .. }
            | Transaction::Purchase { sig, .. }
            | Transaction::Reveal { sig, .. }
            | Transaction::Refund { sig, .. } => Some(sig),
        }
    }

    pub fn verify_signature(&self, signer: &PublicKey) -> bool {
        match self.signature() {
            Some(sig) => signer.verify(&self.signing_bytes(), sig),
            None => true,
        }
    }

    fn signed(mut self, key: &Keypair) -> Self {
        let sig = key.sign(&self.signing_bytes());
        match &mut self {
            Transaction::Mint { .. } => {}
            Transaction::Transfer { sig: s, .. }
            | Transaction::Announce { sig: s, .. }
            | Transaction::Purchase { sig: s, .. }
            | Transaction::Reveal { sig: s, .. }
            | Transaction::Refund { sig: s, .. } => *s = sig,
        }
        self
    }

    pub fn mint(to: PublicKey, amount: u64, nonce: u64) -> Self {
        Transaction::Mint { to, amount, nonce }
    }

    pub fn transfer(from: &Keypair, to: PublicKey, amount: u64, nonce: u64) -> Self {
        Transaction::Transfer { from: from.public(), to, amount, nonce, sig: UNSIGNED }.signed(from)
    }

    pub fn announce(metadata: DatasetMetadata, seller: &Keypair) -> Self {
        Transaction::Announce { metadata, seller_pubkey: seller.public(), sig: UNSIGNED }.signed(seller)
    }

    pub fn purchase(content_id: ContentId, buyer: &Keypair, amount: u64, deadline_height: u64) -> Self {
        Transaction::Purchase { content_id, buyer_pubkey: buyer.public(), amount, deadline_height, sig: UNSIGNED }
            .signed(buyer)
    }

    pub fn reveal(content_id: ContentId, key: DataKey, seller: &Keypair) -> Self {
        Transaction::Reveal { content_id, key, sig: UNSIGNED }.signed(seller)
    }

    pub fn refund(content_id: ContentId, buyer: &Keypair) -> Self {
        Transaction::Refund { content_id, buyer_pubkey: buyer.public(), sig: UNSIGNED }.signed(buyer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_and_tag() {
        let to = PublicKey([7; 32]);
        let tx = Transaction::mint(to, 5, 0);
        let json = String::from_utf8(tx.to_canonical_bytes()).unwrap();
        assert_eq!(json, format!(r#"{{"amount":5,"nonce":0,"to":"{}","type":"mint"}}"#, to.to_hex()));
        let back: Transaction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tx);
        assert_eq!(back.txid(), tx.txid());
    }

    #[test]
    fn signatures_bind_every_field() {
        let buyer = Keypair::from_seed([3; 32]);
        let tx = Transaction::purchase(Digest([1; 32]), &buyer, 30, 12);
        assert!(tx.verify_signature(&buyer.public()));
        assert!(!tx.verify_signature(&Keypair::from_seed([4; 32]).public()));
        let Transaction::Purchase { content_id, buyer_pubkey, deadline_height, sig, .. } = tx.clone() else {
            unreachable!()
        };
        let tampered = Transaction::Purchase { content_id, buyer_pubkey, amount: 1, deadline_height, sig };
        assert!(!tampered.verify_signature(&buyer.public()));
    }
}
