//! On-disk node state: an append-only block log and a blob directory keyed
//! by content id.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ippo_core::ledger::{Block, Chain};
use ippo_core::{sha256, ContentId, PublicKey};

use crate::NodeError;

pub const BLOCK_LOG: &str = "blocks.jsonl";
pub const BLOB_DIR: &str = "blobs";

/// One JSON block per line, genesis first.
pub struct BlockLog {
    file: File,
}

impl BlockLog {
    /// Opens the log in `dir`, replaying and validating it, or starts a new
    /// one from `genesis`. A log that fails validation or starts from a
    /// different genesis block is refused.
    pub fn open(dir: &Path, validators: &[PublicKey], genesis: Chain) -> Result<(Self, Chain), NodeError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(BLOCK_LOG);
        let corrupt = |what: String| NodeError::CorruptState { path: path.clone(), reason: what };
        if !path.exists() {
            let mut log = Self { file: OpenOptions::new().create(true).append(true).open(&path)? };
            log.append(genesis.tip())?;
            return Ok((log, genesis));
        }
        let mut blocks = Vec::new();
        for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            let block: Block = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))?;
            blocks.push(block);
        }
        if blocks.first() != Some(genesis.tip()) {
            return Err(corrupt("genesis block differs from configuration".into()));
        }
        let chain = Chain::from_blocks(validators.to_vec(), blocks).map_err(|e| corrupt(e.to_string()))?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok((Self { file }, chain))
    }

    pub fn append(&mut self, block: &Block) -> Result<(), NodeError> {
        let mut line = serde_json::to_vec(block).expect("blocks serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }

    pub fn sync(&self) -> Result<(), NodeError> {
        self.file.sync_all()?;
        Ok(())
    }
}

/// Files named by the hex content id of their bytes.
pub struct BlobDir {
    dir: PathBuf,
}

impl BlobDir {
    /// Opens `dir` and loads every blob, refusing files whose name is not
    /// the hash of their content.
    pub fn open(dir: &Path) -> Result<(Self, BTreeMap<ContentId, Vec<u8>>), NodeError> {
        let dir = dir.join(BLOB_DIR);
        fs::create_dir_all(&dir)?;
        let mut blobs = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let corrupt = |reason: &str| NodeError::CorruptState { path: path.clone(), reason: reason.into() };
            let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| corrupt("non-utf8 file name"))?;
            if name.ends_with(".tmp") {
                fs::remove_file(&path)?;
                continue;
            }
            let id = ContentId::from_hex(name).map_err(|_| corrupt("file name is not a content id"))?;
            let bytes = fs::read(&path)?;
            if sha256(&bytes) != id {
                return Err(corrupt("content does not match its id"));
            }
            blobs.insert(id, bytes);
        }
        Ok((Self { dir }, blobs))
    }

    pub fn write(&self, id: &ContentId, bytes: &[u8]) -> Result<(), NodeError> {
        let path = self.dir.join(id.to_hex());
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!("{id}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn remove(&self, id: &ContentId) -> Result<(), NodeError> {
        match fs::remove_file(self.dir.join(id.to_hex())) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ippo_core::ledger::{LedgerNode, Transaction};
    use ippo_core::Keypair;

    #[test]
    fn block_log_replays_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let key = Keypair::from_seed([3; 32]);
        let validators = vec![key.public()];
        let genesis = || Chain::new(validators.clone(), vec![Transaction::mint(key.public(), 5, 0)]).unwrap();

        let (mut log, chain) = BlockLog::open(dir.path(), &validators, genesis()).unwrap();
        let mut node = LedgerNode::new(chain, Some(key.clone()));
        for _ in 0..3 {
            log.append(&node.produce_block().unwrap()).unwrap();
        }
        drop(log);
        let (_, replayed) = BlockLog::open(dir.path(), &validators, genesis()).unwrap();
        assert_eq!(replayed.tip().hash, node.chain().tip().hash);

        let path = dir.path().join(BLOCK_LOG);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"height\":2", "\"height\":7", 1)).unwrap();
        assert!(matches!(BlockLog::open(dir.path(), &validators, genesis()), Err(NodeError::CorruptState { .. })));
    }

    #[test]
    fn blob_dir_rejects_tampered_file() {
        let dir = tempfile::tempdir().unwrap();
        let (blobs, loaded) = BlobDir::open(dir.path()).unwrap();
        assert!(loaded.is_empty());
        let id = sha256(b"payload");
        blobs.write(&id, b"payload").unwrap();
        assert_eq!(BlobDir::open(dir.path()).unwrap().1[&id], b"payload");
        fs::write(dir.path().join(BLOB_DIR).join(id.to_hex()), b"tampered").unwrap();
        assert!(matches!(BlobDir::open(dir.path()), Err(NodeError::CorruptState { .. })));
    }
}
