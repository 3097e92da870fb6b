//! Seeded random transaction sequences against a pair of round-robin
//! validators. The oracles below read only the block list and the public
//! state accessors; they never call into the ledger's own invariant checks.

use std::collections::BTreeMap;

use ippo_core::agent::{DataKey, DatasetMetadata, DaySpan};
use ippo_core::ledger::{validate_chain, Block, Chain, EscrowState, LedgerNode, LedgerState, Transaction};
use ippo_core::{sha256, ContentId, Digest, Keypair, PublicKey};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub blocks: u64,
    pub submitted: u64,
    pub included: u64,
    pub settled: u64,
    pub refunded: u64,
}

/// Σ balances + Σ locked escrow against Σ Mint amounts found in the blocks.
pub fn conservation(blocks: &[Block], state: &LedgerState) -> Result<(), String> {
    let minted: u128 = blocks
        .iter()
        .flat_map(|b| &b.txs)
        .map(|tx| match tx {
            Transaction::Mint { amount, .. } => *amount as u128,
            _ => 0,
        })
        .sum();
    let balances: u128 = state.balances().values().map(|&b| b as u128).sum();
    let locked: u128 = state
        .escrows()
        .map(|(_, _, e)| match e {
            EscrowState::Locked { amount, .. } => *amount as u128,
            _ => 0,
        })
        .sum();
    if balances + locked != minted {
        return Err(format!("balances {balances} + locked {locked} != minted {minted}"));
    }
    Ok(())
}

/// Every settled escrow has an on-chain reveal whose key hashes to the
/// announced commitment; every refunded escrow has a refund from that buyer
/// at or after the purchase deadline.
pub fn fair_exchange(blocks: &[Block], state: &LedgerState) -> Result<(), String> {
    let mut commitments: BTreeMap<ContentId, Digest> = BTreeMap::new();
    let mut revealed: BTreeMap<ContentId, DataKey> = BTreeMap::new();
    let mut deadlines: BTreeMap<(ContentId, PublicKey), u64> = BTreeMap::new();
    let mut refunds: BTreeMap<(ContentId, PublicKey), u64> = BTreeMap::new();
    for block in blocks {
        for tx in &block.txs {
            match tx {
                Transaction::Announce { metadata, .. } => {
                    commitments.entry(metadata.content_id).or_insert(metadata.key_commitment);
                }
                Transaction::Reveal { content_id, key, .. } => {
                    revealed.entry(*content_id).or_insert(*key);
                }
                Transaction::Purchase { content_id, buyer_pubkey, deadline_height, .. } => {
                    deadlines.insert((*content_id, *buyer_pubkey), *deadline_height);
                }
                Transaction::Refund { content_id, buyer_pubkey, .. } => {
                    refunds.insert((*content_id, *buyer_pubkey), block.height);
                }
                _ => {}
            }
        }
    }
    for (cid, buyer, escrow) in state.escrows() {
        match escrow {
            EscrowState::Settled => {
                let key = revealed.get(cid).ok_or(format!("{cid} settled with no reveal on chain"))?;
                if Some(&sha256(key.as_bytes())) != commitments.get(cid) {
                    return Err(format!("{cid} settled with a key that misses the commitment"));
                }
            }
            EscrowState::Refunded => {
                let at = refunds.get(&(*cid, *buyer)).ok_or(format!("{cid} refunded with no refund tx"))?;
                let deadline = deadlines.get(&(*cid, *buyer)).ok_or(format!("{cid} refunded with no purchase"))?;
                if at <= deadline {
                    return Err(format!("{cid} refunded at {at}, deadline {deadline}"));
                }
            }
            EscrowState::Locked { .. } => {}
        }
    }
    Ok(())
}

struct Listed {
    cid: ContentId,
    seller: usize,
    key: DataKey,
    price: u64,
}

/// Runs one sequence of `steps` random submissions, producing blocks in
/// between and checking both oracles after every block. The finished chain
/// is replayed from genesis and must reproduce the live state.
pub fn run_sequence(seed: u64, steps: usize) -> Result<FuzzStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let validators: Vec<Keypair> = (0..2).map(|_| Keypair::generate(&mut rng)).collect();
    let actors: Vec<Keypair> = (0..4).map(|_| Keypair::generate(&mut rng)).collect();
    let genesis: Vec<Transaction> =
        actors.iter().enumerate().map(|(i, a)| Transaction::mint(a.public(), rng.gen_range(0..200), i as u64)).collect();
    let chain = Chain::new(validators.iter().map(Keypair::public).collect(), genesis).map_err(|e| e.to_string())?;
    let mut nodes: Vec<LedgerNode> =
        validators.iter().map(|v| LedgerNode::new(chain.clone(), Some(v.clone()))).collect();

    let mut listed: Vec<Listed> = Vec::new();
    let mut history: Vec<Transaction> = Vec::new();
    let mut stats = FuzzStats::default();
    let mut nonce = 1_000u64;

    for _ in 0..steps {
        let height = nodes[0].chain().height();
        let actor = rng.gen_range(0..actors.len());
        let tx = match rng.gen_range(0..10) {
            0 => {
                nonce += 1;
                Transaction::mint(actors[actor].public(), rng.gen_range(0..100), nonce)
            }
            1 => {
                let to = actors.choose(&mut rng).unwrap().public();
                Transaction::transfer(&actors[actor], to, rng.gen_range(0..80), rng.gen_range(0..20))
            }
            2 | 3 => {
                let key = DataKey::generate(&mut rng);
                let cid = match listed.choose(&mut rng) {
                    Some(l) if rng.gen_bool(0.1) => l.cid,
                    _ => sha256(&rng.gen::<[u8; 16]>()),
                };
                let price = rng.gen_range(0..50);
                let metadata = DatasetMetadata {
                    content_id: cid,
                    plaintext_digest: sha256(cid.as_bytes()),
                    key_commitment: key.commitment(),
                    price,
                    epsilon: 1.0,
                    noised_visit_count: rng.gen_range(0..10),
                    noised_first_party_count: rng.gen_range(0..10),
                    day_span: DaySpan { start_day: 0, end_day: rng.gen_range(0..3) },
                    size_bytes: rng.gen_range(1..1000),
                };
                listed.push(Listed { cid, seller: actor, key, price });
                Transaction::announce(metadata, &actors[actor])
            }
            4 | 5 => match listed.choose(&mut rng) {
                Some(l) => {
                    let amount = if rng.gen_bool(0.9) { l.price } else { l.price + 1 };
                    let deadline = (height + rng.gen_range(0..6)).saturating_sub(1);
                    Transaction::purchase(l.cid, &actors[actor], amount, deadline)
                }
                None => continue,
            },
            6 | 7 => match listed.choose(&mut rng) {
                Some(l) => {
                    let key = if rng.gen_bool(0.8) { l.key } else { DataKey::generate(&mut rng) };
                    let signer = if rng.gen_bool(0.85) { l.seller } else { actor };
                    Transaction::reveal(l.cid, key, &actors[signer])
                }
                None => continue,
            },
            8 => match listed.choose(&mut rng) {
                Some(l) => Transaction::refund(l.cid, &actors[actor]),
                None => continue,
            },
            _ => match history.choose(&mut rng) {
                Some(old) => old.clone(),
                None => continue,
            },
        };
        stats.submitted += 1;
        history.push(tx.clone());
        let target = rng.gen_range(0..nodes.len());
        let _ = nodes[target].submit_tx(tx);

        if rng.gen_bool(0.3) {
            let proposer = nodes.iter().position(|n| n.is_scheduled()).ok_or("no scheduled proposer")?;
            // hand the other mempool over so nothing is stranded
            let pending: Vec<Transaction> = nodes[1 - proposer].mempool().to_vec();
            for tx in pending {
                let _ = nodes[proposer].submit_tx(tx);
            }
            let block = nodes[proposer].produce_block().map_err(|e| e.to_string())?;
            nodes[1 - proposer].accept_block(block.clone()).map_err(|e| e.to_string())?;
            stats.blocks += 1;
            stats.included += block.txs.len() as u64;

            let chain = nodes[0].chain();
            if chain.tip() != nodes[1].chain().tip() {
                return Err(format!("validators diverged at height {}", chain.height()));
            }
            conservation(chain.blocks(), chain.state()).map_err(|e| format!("height {}: {e}", chain.height()))?;
            fair_exchange(chain.blocks(), chain.state()).map_err(|e| format!("height {}: {e}", chain.height()))?;
        }
    }
    let chain = nodes[0].chain();
    let replayed = validate_chain(chain.blocks(), chain.validators()).map_err(|e| e.to_string())?;
    if &replayed != chain.state() {
        return Err("replayed state differs from the live state".into());
    }
    for (_, _, e) in chain.state().escrows() {
        match e {
            EscrowState::Settled => stats.settled += 1,
            EscrowState::Refunded => stats.refunded += 1,
            EscrowState::Locked { .. } => {}
        }
    }
    Ok(stats)
}
