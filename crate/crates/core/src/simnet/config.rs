use serde::{Deserialize, Serialize};

use super::SimError;
use crate::bdg::BdgConfig;
use crate::canonical;
use crate::ledger::DEFAULT_ESCROW_DEADLINE;
use crate::trace::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    /// The given agent (every agent when `None`) never reveals keys.
    SellerNeverReveals { agent: Option<usize> },
    /// The node becomes unreachable once the buyer starts purchasing.
    StorageNodeDown { node: usize },
    /// The agent uploads an encryption of junk for one dataset. The content
    /// id matches the upload; the announced plaintext digest does not.
    CorruptCiphertext { agent: usize, dataset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_agents: usize,
    pub datasets_per_agent: usize,
    pub generator: GeneratorConfig,
    pub price: u64,
    pub epsilon: f64,
    pub validators: usize,
    pub storage_nodes: usize,
    pub replication: usize,
    pub buyer_funds: u64,
    pub buyer_budget: u64,
    pub escrow_deadline: u64,
    pub block_interval: u64,
    pub latency_ticks: u64,
    pub drop_probability: f64,
    /// Ticks the buyer waits for all expected listings before buying what
    /// is there.
    pub listing_wait_ticks: u64,
    pub max_ticks: u64,
    pub bdg: BdgConfig,
    pub faults: Vec<Fault>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_agents: 1,
            datasets_per_agent: 1,
            generator: GeneratorConfig::desk_scale(5, 10),
            price: 10,
            epsilon: 1.0,
            validators: 2,
            storage_nodes: 2,
            replication: 2,
            buyer_funds: 1_000,
            buyer_budget: 1_000,
            escrow_deadline: DEFAULT_ESCROW_DEADLINE,
            block_interval: 10,
            latency_ticks: 1,
            drop_probability: 0.0,
            listing_wait_ticks: 5_000,
            max_ticks: 50_000,
            bdg: BdgConfig::default(),
            faults: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::Config(what.to_string()));
        let counts = [
            ("num_agents", self.num_agents as u64),
            ("datasets_per_agent", self.datasets_per_agent as u64),
            ("validators", self.validators as u64),
            ("storage_nodes", self.storage_nodes as u64),
            ("replication", self.replication as u64),
            ("escrow_deadline", self.escrow_deadline),
            ("block_interval", self.block_interval),
            ("latency_ticks", self.latency_ticks),
            ("max_ticks", self.max_ticks),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(&format!("{name} must be at least 1"));
        }
        if self.replication > self.storage_nodes {
            return bad("replication exceeds storage_nodes");
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad("drop_probability must be in [0,1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.latency_ticks * 2 >= self.block_interval {
            return bad("block_interval must exceed twice latency_ticks");
        }
        self.bdg.validate().map_err(|e| SimError::Config(e.to_string()))?;
        for fault in &self.faults {
            let ok = match *fault {
                Fault::SellerNeverReveals { agent } => agent.is_none_or(|a| a < self.num_agents),
                Fault::StorageNodeDown { node } => node < self.storage_nodes,
                Fault::CorruptCiphertext { agent, dataset } => agent < self.num_agents && dataset < self.datasets_per_agent,
            };
            if !ok {
                return bad(&format!("fault {fault:?} refers to a missing actor"));
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, SimError> {
        let config: Self = serde_json::from_slice(bytes).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub(super) fn never_reveals(&self, agent: usize) -> bool {
        self.faults.iter().any(|f| matches!(f, Fault::SellerNeverReveals { agent: a } if a.is_none_or(|a| a == agent)))
    }

    pub(super) fn corrupt(&self, agent: usize, dataset: usize) -> bool {
        self.faults.contains(&Fault::CorruptCiphertext { agent, dataset })
    }

    pub(super) fn down_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.faults.iter().filter_map(|f| match f {
            Fault::StorageNodeDown { node } => Some(*node),
            _ => None,
        })
    }
}

/// The config with `fault` added.
pub fn inject_fault(mut config: ScenarioConfig, fault: Fault) -> ScenarioConfig {
    config.faults.push(fault);
    config
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_parses_from_empty_object() {
        assert_eq!(ScenarioConfig::from_json(b"{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        for json in [
            r#"{"num_agents":0}"#,
            r#"{"drop_probability":1.0}"#,
            r#"{"replication":3}"#,
            r#"{"faults":[{"fault":"storage_node_down","node":2}]}"#,
            r#"{"unknown":1}"#,
        ] {
            assert!(ScenarioConfig::from_json(json.as_bytes()).is_err(), "{json}");
        }
        let c = inject_fault(ScenarioConfig::default(), Fault::SellerNeverReveals { agent: None });
        c.validate().unwrap();
        assert!(c.never_reveals(0));
    }
}
