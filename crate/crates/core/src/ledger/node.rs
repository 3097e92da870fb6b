use std::collections::{BTreeMap, BTreeSet};

use super::{Block, Chain, ChainStatus, EscrowState, LedgerClient, LedgerError, Listing, Transaction};
use crate::agent::DataKey;
use crate::crypto::{ContentId, Digest, Keypair, PublicKey};

/// Operations a validator exposes beyond the client surface: producing its
/// scheduled blocks and ingesting blocks from peers.
pub trait ValidatorBackend: LedgerClient {
    /// Produces and appends the next block if this node is its scheduled
    /// proposer; `Ok(None)` otherwise.
    fn produce(&mut self) -> Result<Option<Block>, LedgerError>;
    fn receive_block(&mut self, block: Block) -> Result<(), LedgerError>;
}

/// A ledger replica: chain, mempool in arrival order, and blocks received
/// ahead of the tip.
#[derive(Debug, Clone)]
pub struct LedgerNode {
    chain: Chain,
    mempool: Vec<Transaction>,
    included: BTreeSet<Digest>,
    ahead: BTreeMap<u64, Block>,
    validator: Option<Keypair>,
}

impl LedgerNode {
    pub fn new(chain: Chain, validator: Option<Keypair>) -> Self {
        let included = chain.blocks().iter().flat_map(|b| b.txs.iter().map(Transaction::txid)).collect();
        Self { chain, mempool: Vec::new(), included, ahead: BTreeMap::new(), validator }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    pub fn validator_key(&self) -> Option<&Keypair> {
        self.validator.as_ref()
    }

    /// Admits a transaction to the mempool if it applies on top of the chain
    /// and the transactions already pending. Rejections carry the ledger
    /// error unchanged.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Digest, LedgerError> {
        let txid = tx.txid();
        if self.included.contains(&txid) || self.mempool.iter().any(|p| p.txid() == txid) {
            return Err(LedgerError::DuplicateTx { txid });
        }
        let height = self.chain.height() + 1;
        let mut scratch = self.chain.state().clone();
        for pending in &self.mempool {
            let _ = scratch.apply(pending, height);
        }
        scratch.apply(&tx, height)?;
        self.mempool.push(tx);
        Ok(txid)
    }

    pub fn produce_block(&mut self) -> Result<Block, LedgerError> {
        let key = self.validator.as_ref().ok_or(LedgerError::WrongProposer {
            height: self.chain.height() + 1,
            found: PublicKey([0; 32]),
        })?;
        let block = self.chain.produce_block(&self.mempool, key)?;
        self.append(block.clone())?;
        Ok(block)
    }

    pub fn is_scheduled(&self) -> bool {
        self.validator
            .as_ref()
            .is_some_and(|k| self.chain.proposer_for(self.chain.height() + 1) == k.public())
    }

    fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        self.chain.append(block)?;
        let tip = self.chain.tip();
        self.included.extend(tip.txs.iter().map(Transaction::txid));
        self.prune_mempool();
        Ok(())
    }

    /// Drops included transactions and those no longer applicable.
    fn prune_mempool(&mut self) {
        let height = self.chain.height() + 1;
        let mut scratch = self.chain.state().clone();
        let included = &self.included;
        self.mempool.retain(|tx| !included.contains(&tx.txid()) && scratch.apply(tx, height).is_ok());
    }

    /// Appends the next block, buffers blocks from the future and ignores
    /// ones already known.
    pub fn accept_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let next = self.chain.height() + 1;
        if block.height < next {
            return Ok(());
        }
        if block.height > next {
            self.ahead.insert(block.height, block);
            return Ok(());
        }
        self.append(block)?;
        while let Some(block) = self.ahead.remove(&(self.chain.height() + 1)) {
            self.append(block)?;
        }
        let tip = self.chain.height();
        self.ahead.retain(|h, _| *h > tip);
        Ok(())
    }
}

impl LedgerClient for LedgerNode {
    fn submit(&mut self, tx: Transaction) -> Result<Digest, LedgerError> {
        self.submit_tx(tx)
    }

    fn listings(&self) -> Result<Vec<Listing>, LedgerError> {
        Ok(self.chain.state().list_datasets().to_vec())
    }

    fn key(&self, content_id: &ContentId) -> Result<DataKey, LedgerError> {
        self.chain.state().get_key(content_id)
    }

    fn balance(&self, account: &PublicKey) -> Result<u64, LedgerError> {
        Ok(self.chain.state().balance(account))
    }

    fn escrow(&self, content_id: &ContentId, buyer: &PublicKey) -> Result<Option<EscrowState>, LedgerError> {
        Ok(self.chain.state().escrow(content_id, buyer))
    }

    fn status(&self) -> Result<ChainStatus, LedgerError> {
        Ok(ChainStatus { height: self.chain.height(), tip_hash: self.chain.tip().hash })
    }

    fn blocks_from(&self, height: u64) -> Result<Vec<Block>, LedgerError> {
        Ok(self.chain.blocks().iter().skip(height as usize).cloned().collect())
    }
}

impl ValidatorBackend for LedgerNode {
    fn produce(&mut self) -> Result<Option<Block>, LedgerError> {
        if !self.is_scheduled() {
            return Ok(None);
        }
        self.produce_block().map(Some)
    }

    fn receive_block(&mut self, block: Block) -> Result<(), LedgerError> {
        self.accept_block(block)
    }
}
