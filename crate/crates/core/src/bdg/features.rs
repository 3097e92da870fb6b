use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::AnonymisedDataset;
use crate::trace::{PageVisit, Request};

/// Observed behaviour of one third-party registrable domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFeatures {
    pub domain: String,
    /// Distinct first parties embedding the domain.
    pub prevalence: u64,
    pub cookie_rate: f64,
    /// Length-weighted mean of query value entropies, in bits per char.
    pub mean_value_entropy: f64,
    /// Share of responses under 100 bytes with an image content type.
    pub pixel_rate: f64,
    /// Share of all third-party requests going to this domain.
    pub request_share: f64,
}

#[derive(Default)]
struct Tally<'a> {
    first_parties: BTreeSet<&'a str>,
    requests: u64,
    cookies: u64,
    pixels: u64,
    value_len: u64,
    weighted_entropy: f64,
}

fn is_pixel(r: &Request) -> bool {
    r.bytes_in < 100 && r.content_type.starts_with("image/")
}

pub fn compute_features(datasets: &[AnonymisedDataset]) -> BTreeMap<String, DomainFeatures> {
    compute_features_for_visits(datasets.iter().flat_map(|d| d.visits.iter()))
}

/// Features over the third-party requests of any sequence of visits.
pub fn compute_features_for_visits<'a>(visits: impl IntoIterator<Item = &'a PageVisit>) -> BTreeMap<String, DomainFeatures> {
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut all = 0u64;
    for visit in visits {
        for r in visit.third_party_requests() {
            let t = tallies.entry(r.registrable_domain.as_str()).or_default();
            t.first_parties.insert(visit.first_party.as_str());
            t.requests += 1;
            t.cookies += u64::from(r.has_cookie());
            t.pixels += u64::from(is_pixel(r));
            for param in &r.query_params {
                let s = param.1.summary();
                t.value_len += s.length;
                t.weighted_entropy += s.length as f64 * s.entropy_bits_per_char;
            }
            all += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(domain, t)| {
            let n = t.requests as f64;
            let features = DomainFeatures {
                domain: domain.to_string(),
                prevalence: t.first_parties.len() as u64,
                cookie_rate: t.cookies as f64 / n,
                mean_value_entropy: if t.value_len == 0 { 0.0 } else { t.weighted_entropy / t.value_len as f64 },
                pixel_rate: t.pixels as f64 / n,
                request_share: n / all as f64,
            };
            (domain.to_string(), features)
        })
        .collect()
}
