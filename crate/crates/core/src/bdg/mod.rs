//! The Big Data Grinder: buys datasets, finds tracking traffic, and turns it
//! into Privacy Labels, Privacy Factors and filter rule-sets.

mod detect;
mod features;
mod kmeans;
mod label;
mod metrics;
mod pipeline;
mod ruleset;

use serde::{Deserialize, Serialize};

pub use detect::{cluster_domains, detect, normalized_features, score_domain, score_report, DomainVerdict, Method, TrackerReport};
pub use features::{compute_features, compute_features_for_visits, DomainFeatures};
pub use kmeans::{kmeans, KMeansResult};
pub use label::{render_label_text, render_labels_text, PrivacyLabel};
pub use metrics::{
    compute_metrics, compute_metrics_for_visits, counterfactual_diff, grade, merge_metrics, privacy_factor, CostDelta,
    Grade, PrivacyFactor, ServiceMetrics,
};
pub use pipeline::{
    acquire_and_analyze, analyze, fetch_datasets, purchase_listings, purchased_content, refund_expired, Acquisition, Analysis, Dispute,
    DisputeReason, Purchase, Retrieval,
};
pub use ruleset::{generate_ruleset, RuleSet, RULESET_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum BdgError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("clustering needs at least {k} domains, got {found}")]
    TooFewDomains { k: usize, found: usize },
    #[error("visit sequences differ at visit {index}")]
    MismatchedVisits { index: usize },
    #[error("no datasets listed")]
    NoListings,
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub prevalence: f64,
    pub cookie: f64,
    pub entropy: f64,
    pub pixel: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { prevalence: 0.4, cookie: 0.3, entropy: 0.2, pixel: 0.1 }
    }
}

/// Linear energy model: joules per byte and per second of tracking traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub joules_per_byte: f64,
    pub joules_per_second: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { joules_per_byte: 1.0e-7, joules_per_second: 0.5 }
    }
}

impl EnergyModel {
    pub fn energy_j(&self, bytes: u64, time_ms: u64) -> f64 {
        self.joules_per_byte * bytes as f64 + self.joules_per_second * (time_ms as f64 / 1000.0)
    }
}

/// Privacy Factor weights and contact saturation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorWeights {
    pub contacts: f64,
    pub bytes: f64,
    pub time: f64,
    pub contact_saturation: u64,
}

impl Default for FactorWeights {
    fn default() -> Self {
        Self { contacts: 0.4, bytes: 0.3, time: 0.3, contact_saturation: 100 }
    }
}

/// One grade boundary: at most `max_contacts` contacts and a tracking byte
/// share strictly below `max_byte_share`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeCutoff {
    pub max_contacts: u64,
    pub max_byte_share: f64,
}

/// Cut-offs for grades B, C and D; anything worse is E.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeTable(pub [GradeCutoff; 3]);

impl Default for GradeTable {
    fn default() -> Self {
        Self([
            GradeCutoff { max_contacts: 5, max_byte_share: 0.05 },
            GradeCutoff { max_contacts: 20, max_byte_share: 0.15 },
            GradeCutoff { max_contacts: 50, max_byte_share: 0.30 },
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdgConfig {
    pub weights: ScoreWeights,
    pub prevalence_norm: f64,
    pub entropy_norm: f64,
    pub min_prevalence: u64,
    pub threshold: f64,
    pub method: Method,
    pub clusters: usize,
    pub energy: EnergyModel,
    pub factor: FactorWeights,
    pub grades: GradeTable,
}

impl Default for BdgConfig {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            prevalence_norm: 10.0,
            entropy_norm: 4.0,
            min_prevalence: 3,
            threshold: 0.5,
            method: Method::Score,
            clusters: 2,
            energy: EnergyModel::default(),
            factor: FactorWeights::default(),
            grades: GradeTable::default(),
        }
    }
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

impl BdgConfig {
    pub fn validate(&self) -> Result<(), BdgError> {
        let w = self.weights;
        let sum = w.prevalence + w.cookie + w.entropy + w.pixel;
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE || [w.prevalence, w.cookie, w.entropy, w.pixel].iter().any(|&x| x < 0.0) {
            return Err(BdgError::Config(format!("score weights must be non-negative and sum to 1, got {sum}")));
        }
        let f = self.factor;
        let sum = f.contacts + f.bytes + f.time;
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE || f.contact_saturation == 0 {
            return Err(BdgError::Config(format!("privacy factor weights must sum to 1, got {sum}")));
        }
        if !(self.prevalence_norm > 0.0 && self.entropy_norm > 0.0) {
            return Err(BdgError::Config("normalisers must be positive".into()));
        }
        if self.clusters < 2 {
            return Err(BdgError::Config("clustering needs k >= 2".into()));
        }
        Ok(())
    }

    /// Parses a JSON config file and validates it.
    pub fn from_json(bytes: &[u8]) -> Result<Self, BdgError> {
        let config: Self = serde_json::from_slice(bytes).map_err(|e| BdgError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        BdgConfig::default().validate().unwrap();
        let parsed = BdgConfig::from_json(b"{}").unwrap();
        assert_eq!(parsed, BdgConfig::default());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = BdgConfig::from_json(br#"{"weights":{"prevalence":0.5,"cookie":0.3,"entropy":0.2,"pixel":0.1}}"#);
        assert!(matches!(err, Err(BdgError::Config(_))));
        let mut c = BdgConfig::default();
        c.factor.time = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn energy_formula() {
        let e = EnergyModel::default().energy_j(1_000_000, 2000);
        assert!((e - 1.1).abs() < 1e-12);
    }
}
