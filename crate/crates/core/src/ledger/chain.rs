use serde::{Deserialize, Serialize};

use super::{LedgerError, LedgerState, Transaction};
use crate::canonical;
use crate::crypto::{sha256_parts, Digest, Keypair, PublicKey, Signature};

/// A block. `hash` covers height, parent, proposer and the canonical
/// transaction list; `signature` is the proposer's signature over `hash`.
/// The genesis block is fixed by configuration and carries no signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub proposer: PublicKey,
    pub txs: Vec<Transaction>,
    pub hash: Digest,
    pub signature: Signature,
}

impl Block {
    pub fn compute_hash(height: u64, prev_hash: &Digest, proposer: &PublicKey, txs: &[Transaction]) -> Digest {
        sha256_parts(&[
            &height.to_be_bytes(),
            prev_hash.as_bytes(),
            proposer.as_bytes(),
            &canonical::to_vec(txs),
        ])
    }

    fn sealed(height: u64, prev_hash: Digest, proposer: PublicKey, txs: Vec<Transaction>, key: Option<&Keypair>) -> Self {
        let hash = Self::compute_hash(height, &prev_hash, &proposer, &txs);
        let signature = key.map_or(Signature([0; 64]), |k| k.sign(hash.as_bytes()));
        Block { height, prev_hash, proposer, txs, hash, signature }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum ChainFault {
    #[error("empty chain")]
    Empty,
    #[error("empty validator set")]
    NoValidators,
    #[error("prev_hash does not link to the previous block")]
    PrevHash,
    #[error("expected height {expected}, found {found}")]
    Height { expected: u64, found: u64 },
    #[error("proposer {found} is not scheduled")]
    Proposer { found: PublicKey },
    #[error("block hash mismatch")]
    HashMismatch,
    #[error("bad proposer signature")]
    BadSignature,
    #[error("transaction {index} invalid: {error}")]
    InvalidTx { index: usize, error: Box<LedgerError> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("block {height}: {reason}")]
pub struct ChainError {
    pub height: u64,
    pub reason: ChainFault,
}

/// A validated chain together with the state it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    validators: Vec<PublicKey>,
    blocks: Vec<Block>,
    state: LedgerState,
}

impl Chain {
    /// Genesis block for a validator set: height 0, proposed by the first
    /// validator, containing the valid subset of `txs` (normally mints).
    pub fn genesis_block(validators: &[PublicKey], txs: Vec<Transaction>) -> Block {
        let mut state = LedgerState::new();
        let txs = txs.into_iter().filter(|tx| state.apply(tx, 0).is_ok()).collect();
        let proposer = validators.first().copied().unwrap_or(PublicKey([0; 32]));
        Block::sealed(0, Digest::ZERO, proposer, txs, None)
    }

    pub fn new(validators: Vec<PublicKey>, genesis_txs: Vec<Transaction>) -> Result<Self, ChainError> {
        let genesis = Self::genesis_block(&validators, genesis_txs);
        Self::from_blocks(validators, vec![genesis])
    }

    /// Replays `blocks` from genesis, checking every rule.
    pub fn from_blocks(validators: Vec<PublicKey>, blocks: Vec<Block>) -> Result<Self, ChainError> {
        if validators.is_empty() {
            return Err(ChainError { height: 0, reason: ChainFault::NoValidators });
        }
        let mut iter = blocks.into_iter();
        let genesis = iter.next().ok_or(ChainError { height: 0, reason: ChainFault::Empty })?;
        let fail = |reason| Err(ChainError { height: 0, reason });
        if genesis.prev_hash != Digest::ZERO {
            return fail(ChainFault::PrevHash);
        }
        if genesis.height != 0 {
            return fail(ChainFault::Height { expected: 0, found: genesis.height });
        }
        if genesis.proposer != validators[0] {
            return fail(ChainFault::Proposer { found: genesis.proposer });
        }
        if Block::compute_hash(0, &genesis.prev_hash, &genesis.proposer, &genesis.txs) != genesis.hash {
            return fail(ChainFault::HashMismatch);
        }
        let mut state = LedgerState::new();
        for (index, tx) in genesis.txs.iter().enumerate() {
            if let Err(e) = state.apply(tx, 0) {
                return fail(ChainFault::InvalidTx { index, error: Box::new(e) });
            }
        }
        let mut chain = Chain { validators, blocks: vec![genesis], state };
        for block in iter {
            chain.append(block)?;
        }
        Ok(chain)
    }

    pub fn validators(&self) -> &[PublicKey] {
        &self.validators
    }

    pub fn proposer_for(&self, height: u64) -> PublicKey {
        self.validators[(height % self.validators.len() as u64) as usize]
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always has a genesis block")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    /// Next block for the scheduled proposer: valid mempool transactions in
    /// arrival order, invalid ones skipped.
    pub fn produce_block(&self, mempool: &[Transaction], key: &Keypair) -> Result<Block, LedgerError> {
        let height = self.height() + 1;
        if self.proposer_for(height) != key.public() {
            return Err(LedgerError::WrongProposer { height, found: key.public() });
        }
        let mut scratch = self.state.clone();
        let txs: Vec<Transaction> =
            mempool.iter().filter(|tx| scratch.apply(tx, height).is_ok()).cloned().collect();
        Ok(Block::sealed(height, self.tip().hash, key.public(), txs, Some(key)))
    }

    pub fn append(&mut self, block: Block) -> Result<(), ChainError> {
        let height = self.height() + 1;
        let fail = |reason| Err(ChainError { height, reason });
        if block.prev_hash != self.tip().hash {
            return fail(ChainFault::PrevHash);
        }
        if block.height != height {
            return fail(ChainFault::Height { expected: height, found: block.height });
        }
        if block.proposer != self.proposer_for(height) {
            return fail(ChainFault::Proposer { found: block.proposer });
        }
        if Block::compute_hash(block.height, &block.prev_hash, &block.proposer, &block.txs) != block.hash {
            return fail(ChainFault::HashMismatch);
        }
        if !block.proposer.verify(block.hash.as_bytes(), &block.signature) {
            return fail(ChainFault::BadSignature);
        }
        let mut next = self.state.clone();
        for (index, tx) in block.txs.iter().enumerate() {
            if let Err(e) = next.apply(tx, height) {
                return fail(ChainFault::InvalidTx { index, error: Box::new(e) });
            }
        }
        self.state = next;
        self.blocks.push(block);
        Ok(())
    }
}

/// Verifies links, schedule, signatures and replays every transition;
/// returns the resulting state.
pub fn validate_chain(blocks: &[Block], validators: &[PublicKey]) -> Result<LedgerState, ChainError> {
    Chain::from_blocks(validators.to_vec(), blocks.to_vec()).map(|c| c.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::DataKey;
    use crate::ledger::state::tests::metadata;

    struct Net {
        keys: Vec<Keypair>,
        chain: Chain,
    }

    fn net() -> Net {
        let keys: Vec<Keypair> = (1..=2).map(|i| Keypair::from_seed([i; 32])).collect();
        let validators = keys.iter().map(Keypair::public).collect();
        let buyer = Keypair::from_seed([9; 32]);
        let chain = Chain::new(validators, vec![Transaction::mint(buyer.public(), 100, 0)]).unwrap();
        Net { keys, chain }
    }

    fn scheduled<'a>(net: &'a Net) -> &'a Keypair {
        let next = net.chain.proposer_for(net.chain.height() + 1);
        net.keys.iter().find(|k| k.public() == next).unwrap()
    }

    fn grow(net: &mut Net, n: usize) {
        let seller = Keypair::from_seed([7; 32]);
        for i in 0..n {
            let key = DataKey([i as u8; 32]);
            let tx = Transaction::announce(metadata(&[i as u8], &key, 5), &seller);
            let block = net.chain.produce_block(&[tx], scheduled(net)).unwrap();
            net.chain.append(block).unwrap();
        }
    }

    #[test]
    fn genesis_only_chain_is_valid() {
        let n = net();
        let state = validate_chain(n.chain.blocks(), n.chain.validators()).unwrap();
        assert_eq!(state.total_minted(), 100);
    }

    #[test]
    fn empty_mempool_block_links_to_tip() {
        let mut n = net();
        let block = n.chain.produce_block(&[], scheduled(&n)).unwrap();
        assert!(block.txs.is_empty());
        assert_eq!(block.prev_hash, n.chain.tip().hash);
        n.chain.append(block).unwrap();
        assert_eq!(n.chain.height(), 1);
    }

    #[test]
    fn invalid_txs_skipped_in_order() {
        let n = net();
        let buyer = Keypair::from_seed([9; 32]);
        let other = Keypair::from_seed([8; 32]);
        let a = Transaction::transfer(&buyer, other.public(), 10, 1);
        let bad = Transaction::transfer(&other, buyer.public(), 1_000, 1);
        let c = Transaction::transfer(&buyer, other.public(), 10, 2);
        let block = n.chain.produce_block(&[a.clone(), bad, c.clone()], scheduled(&n)).unwrap();
        assert_eq!(block.txs, vec![a, c]);
    }

    #[test]
    fn production_is_deterministic_and_scheduled() {
        let n = net();
        let mempool = [Transaction::mint(PublicKey([4; 32]), 1, 7)];
        let a = n.chain.produce_block(&mempool, scheduled(&n)).unwrap();
        let b = n.chain.produce_block(&mempool, scheduled(&n)).unwrap();
        assert_eq!(a.hash, b.hash);
        let wrong = n.keys.iter().find(|k| k.public() != scheduled(&n).public()).unwrap();
        assert!(matches!(n.chain.produce_block(&mempool, wrong), Err(LedgerError::WrongProposer { height: 1, .. })));
    }

    #[test]
    fn tampered_tx_fails_at_its_height() {
        let mut n = net();
        grow(&mut n, 3);
        let mut blocks = n.chain.blocks().to_vec();
        if let Transaction::Announce { metadata, .. } = &mut blocks[2].txs[0] {
            metadata.price ^= 1;
        }
        let err = validate_chain(&blocks, n.chain.validators()).unwrap_err();
        assert_eq!(err, ChainError { height: 2, reason: ChainFault::HashMismatch });
    }

    #[test]
    fn reordered_blocks_fail_on_prev_hash() {
        let mut n = net();
        grow(&mut n, 3);
        let mut blocks = n.chain.blocks().to_vec();
        blocks.swap(1, 2);
        let err = validate_chain(&blocks, n.chain.validators()).unwrap_err();
        assert_eq!(err, ChainError { height: 1, reason: ChainFault::PrevHash });
    }

    #[test]
    fn unscheduled_or_unsigned_blocks_rejected() {
        let mut n = net();
        let wrong = n.keys.iter().find(|k| k.public() != scheduled(&n).public()).unwrap().clone();
        let forged = Block::sealed(1, n.chain.tip().hash, wrong.public(), vec![], Some(&wrong));
        assert!(matches!(n.chain.append(forged).unwrap_err().reason, ChainFault::Proposer { .. }));
        let mut good = n.chain.produce_block(&[], scheduled(&n)).unwrap();
        good.signature = wrong.sign(good.hash.as_bytes());
        assert_eq!(n.chain.append(good).unwrap_err().reason, ChainFault::BadSignature);
    }

    #[test]
    fn replay_matches_incremental_state() {
        let mut n = net();
        grow(&mut n, 4);
        let replayed = validate_chain(n.chain.blocks(), n.chain.validators()).unwrap();
        assert_eq!(&replayed, n.chain.state());
        assert_eq!(replayed.list_datasets().len(), 4);
    }
}
