use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BdgError, EnergyModel, FactorWeights, GradeTable};
use crate::agent::AnonymisedDataset;
use crate::crypto::PublicKey;
use crate::trace::{BrowsingTrace, PageVisit};

/// Tracking cost of one first-party service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub first_party: String,
    pub tracker_contacts: u64,
    pub tracking_bytes: u64,
    pub tracking_time_ms: u64,
    pub energy_j: f64,
    pub total_bytes: u64,
    pub total_time_ms: u64,
}

impl ServiceMetrics {
    fn empty(first_party: &str) -> Self {
        Self {
            first_party: first_party.to_string(),
            tracker_contacts: 0,
            tracking_bytes: 0,
            tracking_time_ms: 0,
            energy_j: 0.0,
            total_bytes: 0,
            total_time_ms: 0,
        }
    }

    pub fn byte_share(&self) -> f64 {
        share(self.tracking_bytes, self.total_bytes)
    }

    pub fn time_share(&self) -> f64 {
        share(self.tracking_time_ms, self.total_time_ms)
    }
}

fn share(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn compute_metrics(dataset: &AnonymisedDataset, trackers: &BTreeSet<String>, energy: &EnergyModel) -> Vec<ServiceMetrics> {
    compute_metrics_for_visits(&dataset.visits, trackers, energy)
}

/// One entry per first party, sorted by first party.
pub fn compute_metrics_for_visits<'a>(
    visits: impl IntoIterator<Item = &'a PageVisit>,
    trackers: &BTreeSet<String>,
    energy: &EnergyModel,
) -> Vec<ServiceMetrics> {
    let mut by_party: BTreeMap<&str, ServiceMetrics> = BTreeMap::new();
    for visit in visits {
        let m = by_party.entry(&visit.first_party).or_insert_with(|| ServiceMetrics::empty(&visit.first_party));
        for r in &visit.requests {
            m.total_bytes += r.bytes_total();
            m.total_time_ms += r.duration_ms;
        }
        for r in visit.third_party_requests().filter(|r| trackers.contains(&r.registrable_domain)) {
            m.tracker_contacts += 1;
            m.tracking_bytes += r.bytes_total();
            m.tracking_time_ms += r.duration_ms;
        }
    }
    by_party
        .into_values()
        .map(|mut m| {
            m.energy_j = energy.energy_j(m.tracking_bytes, m.tracking_time_ms);
            m
        })
        .collect()
}

/// Field-wise sums per first party. Energy is recomputed from the summed
/// counters, so merging is exact and independent of grouping.
pub fn merge_metrics<'a>(parts: impl IntoIterator<Item = &'a ServiceMetrics>, energy: &EnergyModel) -> Vec<ServiceMetrics> {
    let mut by_party: BTreeMap<&str, ServiceMetrics> = BTreeMap::new();
    for p in parts {
        let m = by_party.entry(&p.first_party).or_insert_with(|| ServiceMetrics::empty(&p.first_party));
        m.tracker_contacts += p.tracker_contacts;
        m.tracking_bytes += p.tracking_bytes;
        m.tracking_time_ms += p.tracking_time_ms;
        m.total_bytes += p.total_bytes;
        m.total_time_ms += p.total_time_ms;
    }
    by_party
        .into_values()
        .map(|mut m| {
            m.energy_j = energy.energy_j(m.tracking_bytes, m.tracking_time_ms);
            m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    D,
    E,
}

impl std::fmt::Display for Grade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

pub fn grade(m: &ServiceMetrics, table: &GradeTable) -> Grade {
    if m.tracker_contacts == 0 {
        return Grade::A;
    }
    let share = m.byte_share();
    let grades = [Grade::B, Grade::C, Grade::D];
    for (cutoff, g) in table.0.iter().zip(grades) {
        if m.tracker_contacts <= cutoff.max_contacts && share < cutoff.max_byte_share {
            return g;
        }
    }
    Grade::E
}

/// Per-pseudonym exposure score in [0,100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyFactor {
    pub pseudonym: PublicKey,
    pub value: f64,
}

pub fn privacy_factor_value(contacts: u64, byte_share: f64, time_share: f64, w: &FactorWeights) -> f64 {
    let c = (contacts as f64 / w.contact_saturation as f64).min(1.0);
    (100.0 * (w.contacts * c + w.bytes * byte_share + w.time * time_share)).clamp(0.0, 100.0)
}

/// One factor per pseudonym, in order of first appearance.
pub fn privacy_factor(
    datasets: &[AnonymisedDataset],
    trackers: &BTreeSet<String>,
    weights: &FactorWeights,
) -> Vec<PrivacyFactor> {
    let mut order: Vec<PublicKey> = Vec::new();
    let mut visits: BTreeMap<PublicKey, Vec<&PageVisit>> = BTreeMap::new();
    for d in datasets {
        if !visits.contains_key(&d.pseudonym_pubkey) {
            order.push(d.pseudonym_pubkey);
        }
        visits.entry(d.pseudonym_pubkey).or_default().extend(&d.visits);
    }
    order
        .into_iter()
        .map(|pseudonym| {
            let per_party = compute_metrics_for_visits(visits[&pseudonym].iter().copied(), trackers, &EnergyModel::default());
            let sum = |f: fn(&ServiceMetrics) -> u64| per_party.iter().map(f).sum::<u64>();
            let value = privacy_factor_value(
                sum(|m| m.tracker_contacts),
                share(sum(|m| m.tracking_bytes), sum(|m| m.total_bytes)),
                share(sum(|m| m.tracking_time_ms), sum(|m| m.total_time_ms)),
                weights,
            );
            PrivacyFactor { pseudonym, value }
        })
        .collect()
}

/// Cost of third-party content: `with` minus `without`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostDelta {
    pub delta_bytes: i64,
    pub delta_time_ms: i64,
    pub delta_requests: i64,
}

pub fn counterfactual_diff(with: &BrowsingTrace, without: &BrowsingTrace) -> Result<CostDelta, BdgError> {
    let n = with.visits.len().max(without.visits.len());
    for index in 0..n {
        match (with.visits.get(index), without.visits.get(index)) {
            (Some(a), Some(b)) if a.first_party == b.first_party && a.start_ts_ms == b.start_ts_ms => {}
            _ => return Err(BdgError::MismatchedVisits { index }),
        }
    }
    let diff = |a: u64, b: u64| a as i64 - b as i64;
    Ok(CostDelta {
        delta_bytes: diff(with.total_bytes(), without.total_bytes()),
        delta_time_ms: diff(with.total_time_ms(), without.total_time_ms()),
        delta_requests: diff(with.total_requests(), without.total_requests()),
    })
}
