//! Content-addressed, replicated blob storage.
//!
//! A [`StorageNode`] is a single replica; a [`StorageCluster`] places each blob
//! on the first `r` live nodes of a static node list and verifies every read
//! against the content identifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, ContentId, PublicKey, Signature};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum StorageError {
    #[error("only {live} live nodes, replication factor is {required}")]
    InsufficientReplicas { live: usize, required: usize },
    #[error("blob {id} not found")]
    NotFound { id: ContentId },
    #[error("every replica of {id} failed digest verification")]
    DigestMismatch { id: ContentId },
    #[error("removal signature does not verify against the announcing pseudonym")]
    BadSignature,
    #[error("no announcement for {id}")]
    UnknownId { id: ContentId },
    #[error("invalid cluster configuration: {reason}")]
    Config { reason: String },
    #[error("storage node unavailable: {reason}")]
    Unavailable { reason: String },
}

/// Proof that the pseudonym which announced a blob asked for its removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalAuth {
    pub announcer: PublicKey,
    pub signature: Signature,
}

/// Bytes signed to authorize removal of `id`.
pub fn removal_message(id: &ContentId) -> Vec<u8> {
    let mut msg = b"ippo-remove-v1:".to_vec();
    msg.extend_from_slice(id.as_bytes());
    msg
}

impl RemovalAuth {
    pub fn sign(id: &ContentId, owner: &crate::Keypair) -> Self {
        Self { announcer: owner.public(), signature: owner.sign(&removal_message(id)) }
    }

    pub fn verifies(&self, id: &ContentId) -> bool {
        self.announcer.verify(&removal_message(id), &self.signature)
    }
}

/// Resolves which pseudonym announced a content id.
pub trait AnnouncerLookup {
    fn announcer(&self, id: &ContentId) -> Option<PublicKey>;
}

/// One replica. Implemented in-process by [`StorageNode`] and over HTTP by
/// the node service client.
pub trait BlobStore {
    fn put_blob(&mut self, blob: &[u8]) -> Result<ContentId, StorageError>;
    /// Raw stored bytes, unverified.
    fn get_blob(&self, id: &ContentId) -> Result<Option<Vec<u8>>, StorageError>;
    fn delete_blob(&mut self, id: &ContentId, auth: &RemovalAuth) -> Result<(), StorageError>;
}

/// What agents and buyers need from the storage layer.
pub trait StorageClient {
    fn put(&mut self, blob: &[u8]) -> Result<ContentId, StorageError>;
    fn get(&self, id: &ContentId) -> Result<Vec<u8>, StorageError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StorageNode {
    blobs: BTreeMap<ContentId, Vec<u8>>,
}

impl StorageNode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn stored_bytes(&self) -> usize {
        self.blobs.values().map(Vec::len).sum()
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.blobs.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ContentId> {
        self.blobs.keys()
    }

    /// Fault injection: flips the first byte of the stored copy (or appends
    /// one to an empty blob). Returns false if the blob is absent.
    pub fn corrupt(&mut self, id: &ContentId) -> bool {
        match self.blobs.get_mut(id) {
            Some(bytes) if bytes.is_empty() => {
                bytes.push(0);
                true
            }
            Some(bytes) => {
                bytes[0] ^= 0xff;
                true
            }
            None => false,
        }
    }

    /// Inserts bytes under an id without hashing, for loading persisted state.
    pub fn insert_unchecked(&mut self, id: ContentId, bytes: Vec<u8>) {
        self.blobs.insert(id, bytes);
    }
}

impl BlobStore for StorageNode {
    fn put_blob(&mut self, blob: &[u8]) -> Result<ContentId, StorageError> {
        let id = sha256(blob);
        self.blobs.entry(id).or_insert_with(|| blob.to_vec());
        Ok(id)
    }

    fn get_blob(&self, id: &ContentId) -> Result<Option<Vec<u8>>, StorageError> {
        Ok(self.blobs.get(id).cloned())
    }

    fn delete_blob(&mut self, id: &ContentId, auth: &RemovalAuth) -> Result<(), StorageError> {
        if !auth.verifies(id) {
            return Err(StorageError::BadSignature);
        }
        self.blobs.remove(id).map(|_| ()).ok_or(StorageError::NotFound { id: *id })
    }
}

/// Static node list with eager replication.
#[derive(Debug, Clone)]
pub struct StorageCluster<N = StorageNode> {
    nodes: Vec<N>,
    up: Vec<bool>,
    replication: usize,
}

pub const DEFAULT_REPLICATION: usize = 2;

impl<N: BlobStore> StorageCluster<N> {
    pub fn new(nodes: Vec<N>, replication: usize) -> Result<Self, StorageError> {
        if replication == 0 || replication > nodes.len() {
            return Err(StorageError::Config {
                reason: format!("replication {replication} with {} nodes", nodes.len()),
            });
        }
        let up = vec![true; nodes.len()];
        Ok(Self { nodes, up, replication })
    }

    pub fn replication(&self) -> usize {
        self.replication
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    pub fn node_mut(&mut self, index: usize) -> &mut N {
        &mut self.nodes[index]
    }

    pub fn set_up(&mut self, index: usize, up: bool) {
        self.up[index] = up;
    }

    pub fn is_up(&self, index: usize) -> bool {
        self.up[index]
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.up[i])
    }

    /// Deletes every replica after checking the removal is signed by the
    /// pseudonym that announced `id`.
    pub fn remove(
        &mut self,
        id: &ContentId,
        signature: &Signature,
        registry: &impl AnnouncerLookup,
    ) -> Result<(), StorageError> {
        let announcer = registry.announcer(id).ok_or(StorageError::UnknownId { id: *id })?;
        let auth = RemovalAuth { announcer, signature: *signature };
        if !auth.verifies(id) {
            return Err(StorageError::BadSignature);
        }
        let mut removed = false;
        for i in self.live().collect::<Vec<_>>() {
            match self.nodes[i].delete_blob(id, &auth) {
                Ok(()) => removed = true,
                Err(StorageError::NotFound { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if removed {
            Ok(())
        } else {
            Err(StorageError::UnknownId { id: *id })
        }
    }
}

impl<N: BlobStore> StorageClient for StorageCluster<N> {
    fn put(&mut self, blob: &[u8]) -> Result<ContentId, StorageError> {
        let targets: Vec<usize> = self.live().take(self.replication).collect();
        if targets.len() < self.replication {
            return Err(StorageError::InsufficientReplicas { live: targets.len(), required: self.replication });
        }
        let id = sha256(blob);
        for i in targets {
            let stored = self.nodes[i].put_blob(blob)?;
            debug_assert_eq!(stored, id);
        }
        Ok(id)
    }

    fn get(&self, id: &ContentId) -> Result<Vec<u8>, StorageError> {
        let mut corrupt = false;
        for i in self.live() {
            match self.nodes[i].get_blob(id) {
                Ok(Some(bytes)) if sha256(&bytes) == *id => return Ok(bytes),
                Ok(Some(_)) => corrupt = true,
                Ok(None) | Err(_) => {}
            }
        }
        if corrupt {
            Err(StorageError::DigestMismatch { id: *id })
        } else {
            Err(StorageError::NotFound { id: *id })
        }
    }
}
