use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::{BdgConfig, BdgError, DomainFeatures, ScoreWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Score,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainVerdict {
    pub features: DomainFeatures,
    pub score: f64,
    pub is_tracker: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerReport {
    pub method: Method,
    pub domains: BTreeMap<String, DomainVerdict>,
    /// Set when clustering found no usable separation; no domain is then
    /// classified as a tracker.
    pub degenerate: bool,
}

impl TrackerReport {
    pub fn tracker_domains(&self) -> BTreeSet<String> {
        self.domains.iter().filter(|(_, v)| v.is_tracker).map(|(d, _)| d.clone()).collect()
    }
}

/// The four score terms, each in [0,1].
pub fn normalized_features(f: &DomainFeatures, config: &BdgConfig) -> [f64; 4] {
    [
        (f.prevalence as f64 / config.prevalence_norm).min(1.0),
        f.cookie_rate,
        (f.mean_value_entropy / config.entropy_norm).min(1.0),
        f.pixel_rate,
    ]
}

pub fn score_domain(f: &DomainFeatures, config: &BdgConfig) -> f64 {
    let ScoreWeights { prevalence, cookie, entropy, pixel } = config.weights;
    let [p, c, e, x] = normalized_features(f, config);
    (prevalence * p + cookie * c + entropy * e + pixel * x).clamp(0.0, 1.0)
}

pub fn score_report(features: &BTreeMap<String, DomainFeatures>, config: &BdgConfig) -> TrackerReport {
    let domains = features
        .iter()
        .map(|(d, f)| {
            let score = score_domain(f, config);
            let is_tracker = f.prevalence >= config.min_prevalence && score >= config.threshold;
            (d.clone(), DomainVerdict { features: f.clone(), score, is_tracker })
        })
        .collect();
    TrackerReport { method: Method::Score, domains, degenerate: false }
}

/// k-means over the normalised features. The tracker cluster is the one with
/// the highest mean normalised prevalence; a tie for that, an empty cluster
/// or fewer than two distinct points makes the report degenerate.
pub fn cluster_domains(
    features: &BTreeMap<String, DomainFeatures>,
    config: &BdgConfig,
    seed: u64,
) -> Result<TrackerReport, BdgError> {
    let k = config.clusters;
    if features.len() < k {
        return Err(BdgError::TooFewDomains { k, found: features.len() });
    }
    let points: Vec<[f64; 4]> = features.values().map(|f| normalized_features(f, config)).collect();
    let result = kmeans(&points, k, seed);
    let sizes = result.cluster_sizes();

    let mean_prevalence: Vec<f64> = (0..k)
        .map(|c| {
            let sum: f64 = points.iter().zip(&result.assignments).filter(|(_, &a)| a == c).map(|(p, _)| p[0]).sum();
            sum / sizes[c].max(1) as f64
        })
        .collect();
    let top = mean_prevalence.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<usize> = (0..k).filter(|&c| mean_prevalence[c] == top).collect();
    let distinct = points.iter().any(|p| p != &points[0]);
    let degenerate = !distinct || sizes.contains(&0) || leaders.len() != 1;

    let domains = features
        .iter()
        .zip(&result.assignments)
        .map(|((d, f), &cluster)| {
            let verdict = DomainVerdict {
                features: f.clone(),
                score: score_domain(f, config),
                is_tracker: !degenerate && cluster == leaders[0],
            };
            (d.clone(), verdict)
        })
        .collect();
    Ok(TrackerReport { method: Method::Cluster, domains, degenerate })
}

/// Runs the configured detection method.
pub fn detect(features: &BTreeMap<String, DomainFeatures>, config: &BdgConfig, seed: u64) -> Result<TrackerReport, BdgError> {
    match config.method {
        Method::Score => Ok(score_report(features, config)),
        Method::Cluster => cluster_domains(features, config, seed),
    }
}
