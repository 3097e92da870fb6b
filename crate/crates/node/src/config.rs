//! Config files for `serve` and key files for every command that signs.

use std::fs;
use std::path::{Path, PathBuf};

use ippo_core::crypto::keypair_hex;
use ippo_core::ledger::{Chain, Transaction};
use ippo_core::{Keypair, PublicKey};
use serde::{Deserialize, Serialize};

use crate::NodeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub public: PublicKey,
    #[serde(with = "keypair_hex")]
    pub seed: Keypair,
}

impl KeyFile {
    pub fn new(key: Keypair) -> Self {
        Self { public: key.public(), seed: key }
    }

    pub fn load(path: &Path) -> Result<Keypair, NodeError> {
        let bytes = fs::read(path).map_err(|e| NodeError::Config(format!("{}: {e}", path.display())))?;
        let file: Self = serde_json::from_slice(&bytes).map_err(|e| NodeError::Config(format!("{}: {e}", path.display())))?;
        if file.seed.public() != file.public {
            return Err(NodeError::Config(format!("{}: public key does not match seed", path.display())));
        }
        Ok(file.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub listen: String,
    /// Block log or blob directory; state is memory-only when absent.
    pub state_dir: Option<PathBuf>,
    /// Ledger: validator set in schedule order.
    pub validators: Vec<PublicKey>,
    /// Ledger: key file of this validator; a non-validating replica without.
    pub validator_key: Option<PathBuf>,
    /// Ledger: transactions of the genesis block.
    pub genesis: Vec<Transaction>,
    /// Ledger: nodes that receive every block this node produces.
    pub peers: Vec<String>,
    /// Ledger: produce on this schedule; blocks are produced on
    /// `POST /produce` otherwise.
    pub block_interval_ms: Option<u64>,
    /// Storage: ledger consulted to authorize removals.
    pub ledger_url: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7000".into(),
            state_dir: None,
            validators: Vec::new(),
            validator_key: None,
            genesis: Vec::new(),
            peers: Vec::new(),
            block_interval_ms: None,
            ledger_url: None,
        }
    }
}

impl ServeConfig {
    /// Reads a config; relative paths inside are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let bytes = fs::read(path).map_err(|e| NodeError::Config(format!("{}: {e}", path.display())))?;
        let mut config: Self =
            serde_json::from_slice(&bytes).map_err(|e| NodeError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.state_dir, &mut config.validator_key].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn genesis_chain(&self) -> Result<Chain, NodeError> {
        Chain::new(self.validators.clone(), self.genesis.clone()).map_err(|e| NodeError::Config(e.to_string()))
    }

    pub fn validator(&self) -> Result<Option<Keypair>, NodeError> {
        let Some(path) = &self.validator_key else { return Ok(None) };
        let key = KeyFile::load(path)?;
        if !self.validators.contains(&key.public()) {
            return Err(NodeError::Config(format!("{} is not in the validator set", key.public())));
        }
        Ok(Some(key))
    }
}
