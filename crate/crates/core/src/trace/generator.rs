//! Seeded synthetic traces with planted trackers and an exact ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::Alphanumeric;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{registrable_domain, BrowsingTrace, Device, PageVisit, QueryParam, QueryValue, Request, SuffixList, TraceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub first_parties: usize,
    pub visits_per_first_party: usize,
    pub trackers: Vec<PlantedTracker>,
    pub benign: Vec<BenignThirdParty>,
    pub device: Device,
    pub user_label: String,
    pub start_ts_ms: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            first_parties: 20,
            visits_per_first_party: 2,
            trackers: Vec::new(),
            benign: Vec::new(),
            device: Device::Desktop,
            user_label: "local-user".into(),
            start_ts_ms: 1_700_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedTracker {
    pub domain: String,
    /// Number of distinct first parties embedding the tracker.
    pub prevalence: usize,
    pub requests_per_visit: usize,
    pub sets_cookie: bool,
    /// Length of the random identifier sent as a query value; 0 sends none.
    pub id_value_len: usize,
    /// Responds with a tiny image instead of a script.
    pub pixel: bool,
}

impl Default for PlantedTracker {
    fn default() -> Self {
        Self {
            domain: String::new(),
            prevalence: 5,
            requests_per_visit: 2,
            sets_cookie: true,
            id_value_len: 24,
            pixel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenignThirdParty {
    pub domain: String,
    pub prevalence: usize,
    pub requests_per_visit: usize,
}

impl Default for BenignThirdParty {
    fn default() -> Self {
        Self { domain: String::new(), prevalence: 1, requests_per_visit: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitTracking {
    pub bytes: u64,
    pub time_ms: u64,
    pub contacts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tracker_domains: BTreeSet<String>,
    /// Planted tracker traffic per visit index; every visit has an entry.
    pub per_visit_tracking: BTreeMap<usize, VisitTracking>,
}

impl GroundTruth {
    pub fn totals(&self) -> VisitTracking {
        self.per_visit_tracking.values().fold(VisitTracking::default(), |acc, v| VisitTracking {
            bytes: acc.bytes + v.bytes,
            time_ms: acc.time_ms + v.time_ms,
            contacts: acc.contacts + v.contacts,
        })
    }
}

impl GeneratorConfig {
    /// The desk-scale population: 20 sites, `trackers` planted trackers with
    /// prevalence 5..=9 and `benign` third parties with prevalence 1..=2.
    pub fn desk_scale(trackers: usize, benign: usize) -> Self {
        Self {
            trackers: (0..trackers)
                .map(|i| PlantedTracker {
                    domain: format!("t{}.example", i + 1),
                    prevalence: 5 + i % 5,
                    pixel: i % 2 == 1,
                    ..PlantedTracker::default()
                })
                .collect(),
            benign: (0..benign)
                .map(|i| BenignThirdParty {
                    domain: format!("cdn{}.example", i + 1),
                    prevalence: 1 + i % 2,
                    ..BenignThirdParty::default()
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn first_party_name(i: usize) -> String {
        format!("site{i:02}.example")
    }

    fn validate(&self) -> Result<(), TraceError> {
        let mut seen = BTreeSet::new();
        let domains = self
            .trackers
            .iter()
            .map(|t| (&t.domain, t.prevalence))
            .chain(self.benign.iter().map(|b| (&b.domain, b.prevalence)));
        for (domain, prevalence) in domains {
            if prevalence > self.first_parties {
                return Err(TraceError::Generator(format!(
                    "{domain}: prevalence {prevalence} exceeds {} first parties",
                    self.first_parties
                )));
            }
            if domain.is_empty() || registrable_domain(domain, SuffixList::bundled()) != *domain {
                return Err(TraceError::Generator(format!("{domain:?} is not a registrable domain")));
            }
            if (0..self.first_parties).any(|i| Self::first_party_name(i) == *domain) {
                return Err(TraceError::Generator(format!("{domain} collides with a first party")));
            }
            if !seen.insert(domain.clone()) {
                return Err(TraceError::Generator(format!("duplicate domain {domain}")));
            }
        }
        Ok(())
    }
}

fn random_id(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from(rng.sample(Alphanumeric))).collect()
}

pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<(BrowsingTrace, GroundTruth), TraceError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.first_parties;

    let embed = |rng: &mut ChaCha8Rng, prevalence: usize| -> BTreeSet<usize> {
        index::sample(rng, n, prevalence).into_iter().collect()
    };
    let tracker_sites: Vec<BTreeSet<usize>> =
        config.trackers.iter().map(|t| embed(&mut rng, t.prevalence)).collect();
    let benign_sites: Vec<BTreeSet<usize>> =
        config.benign.iter().map(|b| embed(&mut rng, b.prevalence)).collect();

    let mut order: Vec<usize> = (0..n).flat_map(|fp| std::iter::repeat_n(fp, config.visits_per_first_party)).collect();
    order.shuffle(&mut rng);

    let mut seen_before = vec![false; n];
    let mut ts = config.start_ts_ms;
    let mut visits = Vec::with_capacity(order.len());
    let mut truth = GroundTruth {
        tracker_domains: config.trackers.iter().map(|t| t.domain.clone()).collect(),
        per_visit_tracking: BTreeMap::new(),
    };

    for (visit_index, &fp) in order.iter().enumerate() {
        ts += rng.gen_range(5_000..=120_000);
        let site = GeneratorConfig::first_party_name(fp);
        let returning = seen_before[fp];
        seen_before[fp] = true;

        let mut requests = vec![Request {
            url: format!("https://www.{site}/"),
            host: format!("www.{site}"),
            registrable_domain: site.clone(),
            ts_rel_ms: 0,
            duration_ms: rng.gen_range(80..=400),
            bytes_out: rng.gen_range(300..=600),
            bytes_in: rng.gen_range(20_000..=120_000),
            status: 200,
            content_type: "text/html".into(),
            cookie_sent: returning,
            cookie_set: !returning,
            query_params: Vec::new(),
        }];

        for _ in 0..rng.gen_range(2..=5) {
            let (path, content_type) = *[("app.js", "application/javascript"), ("site.css", "text/css"), ("hero.png", "image/png")]
                .choose(&mut rng)
                .expect("non-empty");
            requests.push(Request {
                url: format!("https://static.{site}/{path}?v=3"),
                host: format!("static.{site}"),
                registrable_domain: site.clone(),
                ts_rel_ms: rng.gen_range(10..=3_000),
                duration_ms: rng.gen_range(20..=300),
                bytes_out: rng.gen_range(250..=500),
                bytes_in: rng.gen_range(2_000..=80_000),
                status: 200,
                content_type: content_type.into(),
                cookie_sent: false,
                cookie_set: false,
                query_params: vec![QueryParam("v".into(), QueryValue::Raw("3".into()))],
            });
        }

        for (b, sites) in config.benign.iter().zip(&benign_sites) {
            if !sites.contains(&fp) {
                continue;
            }
            for _ in 0..b.requests_per_visit {
                let (path, content_type) = *[("lib.min.js", "application/javascript"), ("font.woff2", "font/woff2")]
                    .choose(&mut rng)
                    .expect("non-empty");
                requests.push(Request {
                    url: format!("https://static.{}/{path}?ver=1.2.0", b.domain),
                    host: format!("static.{}", b.domain),
                    registrable_domain: b.domain.clone(),
                    ts_rel_ms: rng.gen_range(10..=3_000),
                    duration_ms: rng.gen_range(20..=250),
                    bytes_out: rng.gen_range(250..=500),
                    bytes_in: rng.gen_range(5_000..=60_000),
                    status: 200,
                    content_type: content_type.into(),
                    cookie_sent: false,
                    cookie_set: false,
                    query_params: vec![QueryParam("ver".into(), QueryValue::Raw("1.2.0".into()))],
                });
            }
        }

        let mut tracking = VisitTracking::default();
        for (t, sites) in config.trackers.iter().zip(&tracker_sites) {
            if !sites.contains(&fp) {
                continue;
            }
            for _ in 0..t.requests_per_visit {
                let mut query_params = Vec::new();
                let mut url = format!("https://px.{}/collect?ev=pv", t.domain);
                if t.id_value_len > 0 {
                    let id = random_id(&mut rng, t.id_value_len);
                    url.push_str(&format!("&uid={id}"));
                    query_params.push(QueryParam("uid".into(), QueryValue::Raw(id)));
                }
                query_params.insert(0, QueryParam("ev".into(), QueryValue::Raw("pv".into())));
                let (content_type, bytes_in) = if t.pixel {
                    ("image/gif", 43)
                } else {
                    ("application/javascript", rng.gen_range(2_000..=30_000))
                };
                let request = Request {
                    url,
                    host: format!("px.{}", t.domain),
                    registrable_domain: t.domain.clone(),
                    ts_rel_ms: rng.gen_range(10..=3_000),
                    duration_ms: rng.gen_range(20..=300),
                    bytes_out: rng.gen_range(200..=900),
                    bytes_in,
                    status: 200,
                    content_type: content_type.into(),
                    cookie_sent: t.sets_cookie,
                    cookie_set: t.sets_cookie,
                    query_params,
                };
                tracking.bytes += request.bytes_total();
                tracking.time_ms += request.duration_ms;
                tracking.contacts += 1;
                requests.push(request);
            }
        }

        // stable: the document fetch at 0 stays first
        requests.sort_by_key(|r| r.ts_rel_ms);
        truth.per_visit_tracking.insert(visit_index, tracking);
        visits.push(PageVisit { first_party: site, start_ts_ms: ts, requests });
    }

    let trace = BrowsingTrace { user_label: config.user_label.clone(), device: config.device, visits };
    Ok((trace, truth))
}

/// The generated trace together with the same trace stripped of every
/// planted tracker request.
pub fn counterfactual_pair(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(BrowsingTrace, BrowsingTrace, GroundTruth), TraceError> {
    let (with, truth) = generate_synthetic(config, seed)?;
    let mut without = with.clone();
    for visit in &mut without.visits {
        visit.requests.retain(|r| !truth.tracker_domains.contains(&r.registrable_domain));
    }
    Ok((with, without, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_trace, serialize_trace};

    #[test]
    fn zero_trackers_has_empty_truth() {
        let config = GeneratorConfig::desk_scale(0, 4);
        let (trace, truth) = generate_synthetic(&config, 3).unwrap();
        assert!(truth.tracker_domains.is_empty());
        assert_eq!(truth.totals(), VisitTracking::default());
        assert_eq!(trace.visits.len(), 40);
    }

    #[test]
    fn deterministic_per_seed() {
        let config = GeneratorConfig::desk_scale(5, 10);
        let a = serialize_trace(&generate_synthetic(&config, 11).unwrap().0);
        let b = serialize_trace(&generate_synthetic(&config, 11).unwrap().0);
        let c = serialize_trace(&generate_synthetic(&config, 12).unwrap().0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn prevalence_is_exact() {
        let config = GeneratorConfig {
            trackers: vec![PlantedTracker { domain: "t1.example".into(), prevalence: 5, ..Default::default() }],
            ..GeneratorConfig::default()
        };
        for seed in 0..10 {
            let (trace, _) = generate_synthetic(&config, seed).unwrap();
            let sites: BTreeSet<&str> = trace
                .visits
                .iter()
                .filter(|v| v.third_party_requests().any(|r| r.registrable_domain == "t1.example"))
                .map(|v| v.first_party.as_str())
                .collect();
            assert_eq!(sites.len(), 5);
        }
    }

    #[test]
    fn prevalence_above_site_count_rejected() {
        let config = GeneratorConfig {
            first_parties: 3,
            trackers: vec![PlantedTracker { domain: "t1.example".into(), prevalence: 4, ..Default::default() }],
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_synthetic(&config, 0), Err(TraceError::Generator(_))));
        let bad_domain = GeneratorConfig {
            trackers: vec![PlantedTracker { domain: "px.t1.example".into(), ..Default::default() }],
            ..GeneratorConfig::default()
        };
        assert!(generate_synthetic(&bad_domain, 0).is_err());
    }

    #[test]
    fn generated_trace_is_valid_and_round_trips() {
        let (trace, _) = generate_synthetic(&GeneratorConfig::desk_scale(5, 10), 4).unwrap();
        let parsed = parse_trace(&serialize_trace(&trace)).unwrap();
        assert_eq!(parsed.visits, trace.visits);
    }

    #[test]
    fn counterfactual_accounting() {
        let config = GeneratorConfig::desk_scale(5, 10);
        let (with, without, truth) = counterfactual_pair(&config, 9).unwrap();
        let totals = truth.totals();
        assert_eq!(with.total_bytes() - without.total_bytes(), totals.bytes);
        assert_eq!(with.total_time_ms() - without.total_time_ms(), totals.time_ms);
        assert_eq!(with.total_requests() - without.total_requests(), totals.contacts);
        let fps = |t: &BrowsingTrace| t.visits.iter().map(|v| v.first_party.clone()).collect::<Vec<_>>();
        assert_eq!(fps(&with), fps(&without));

        let (w, wo, _) = counterfactual_pair(&GeneratorConfig::desk_scale(0, 3), 9).unwrap();
        assert_eq!(w, wo);
    }
}
