//! Core of the IPPO testbed: browsing traces, the anonymising agent, the
//! distributed data marketplace (content-addressed storage plus a
//! proof-of-authority escrow ledger), the Big Data Grinder analytics and a
//! deterministic simulator tying them together.

pub mod agent;
pub mod bdg;
pub mod canonical;
pub mod crypto;
pub mod ledger;
pub mod simnet;
pub mod storage;
pub mod trace;

pub use crypto::{sha256, ContentId, Digest, Keypair, PublicKey, Signature};
