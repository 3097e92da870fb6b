//! Browsing-trace data model, the JSON-Lines trace format and the synthetic
//! trace generator that stands in for scraping bots.

mod domain;
mod entropy;
mod generator;

use serde::{Deserialize, Serialize};

pub use domain::{registrable_domain, SuffixList};
pub use entropy::char_entropy;
pub use generator::{
    counterfactual_pair, generate_synthetic, BenignThirdParty, GeneratorConfig, GroundTruth,
    PlantedTracker, VisitTracking,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Invalid { line: usize, message: String },
    #[error("invalid generator config: {0}")]
    Generator(String),
}

/// Length and character entropy of a query value, published instead of the
/// value itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub length: u64,
    pub entropy_bits_per_char: f64,
}

impl ValueSummary {
    pub fn of(value: &str) -> Self {
        Self {
            length: value.chars().count() as u64,
            entropy_bits_per_char: char_entropy(value),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let h = self.entropy_bits_per_char;
        if !(0.0..=8.0).contains(&h) {
            return Err(format!("entropy {h} outside [0, 8]"));
        }
        if self.length <= 1 && h != 0.0 {
            return Err("entropy must be 0 for values of length <= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryValue {
    Raw(String),
    Summary(ValueSummary),
}

impl QueryValue {
    pub fn summary(&self) -> ValueSummary {
        match self {
            QueryValue::Raw(v) => ValueSummary::of(v),
            QueryValue::Summary(s) => *s,
        }
    }
}

/// `(name, value)` pair, serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryParam(pub String, pub QueryValue);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RequestRecord", into = "RequestRecord")]
pub struct Request {
    pub url: String,
    pub host: String,
    /// Derived from `host` with the bundled suffix list; never serialized.
    pub registrable_domain: String,
    pub ts_rel_ms: u64,
    pub duration_ms: u64,
    pub bytes_out: u64,
    pub bytes_in: u64,
    pub status: u16,
    pub content_type: String,
    pub cookie_sent: bool,
    pub cookie_set: bool,
    pub query_params: Vec<QueryParam>,
}

// Field order here is the on-disk order of the trace format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestRecord {
    url: String,
    host: String,
    ts_rel_ms: u64,
    duration_ms: u64,
    bytes_out: u64,
    bytes_in: u64,
    status: u16,
    content_type: String,
    cookie_sent: bool,
    cookie_set: bool,
    query_params: Vec<QueryParam>,
}

impl TryFrom<RequestRecord> for Request {
    type Error = String;

    fn try_from(r: RequestRecord) -> Result<Self, String> {
        if r.host.is_empty() {
            return Err("empty host".into());
        }
        if r.host.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(format!("host {:?} is not lowercase", r.host));
        }
        if !(100..=599).contains(&r.status) {
            return Err(format!("status {} outside 100-599", r.status));
        }
        for QueryParam(name, value) in &r.query_params {
            if let QueryValue::Summary(s) = value {
                s.validate().map_err(|e| format!("query param {name:?}: {e}"))?;
            }
        }
        let registrable_domain = registrable_domain(&r.host, SuffixList::bundled());
        Ok(Request {
            url: r.url,
            host: r.host,
            registrable_domain,
            ts_rel_ms: r.ts_rel_ms,
            duration_ms: r.duration_ms,
            bytes_out: r.bytes_out,
            bytes_in: r.bytes_in,
            status: r.status,
            content_type: r.content_type,
            cookie_sent: r.cookie_sent,
            cookie_set: r.cookie_set,
            query_params: r.query_params,
        })
    }
}

impl From<Request> for RequestRecord {
    fn from(r: Request) -> Self {
        RequestRecord {
            url: r.url,
            host: r.host,
            ts_rel_ms: r.ts_rel_ms,
            duration_ms: r.duration_ms,
            bytes_out: r.bytes_out,
            bytes_in: r.bytes_in,
            status: r.status,
            content_type: r.content_type,
            cookie_sent: r.cookie_sent,
            cookie_set: r.cookie_set,
            query_params: r.query_params,
        }
    }
}

impl Request {
    pub fn bytes_total(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }

    pub fn has_cookie(&self) -> bool {
        self.cookie_sent || self.cookie_set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PageVisitRecord", into = "PageVisitRecord")]
pub struct PageVisit {
    pub first_party: String,
    pub start_ts_ms: u64,
    pub requests: Vec<Request>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageVisitRecord {
    first_party: String,
    start_ts_ms: u64,
    requests: Vec<Request>,
}

impl TryFrom<PageVisitRecord> for PageVisit {
    type Error = String;

    fn try_from(v: PageVisitRecord) -> Result<Self, String> {
        if v.first_party.is_empty() {
            return Err("empty first_party".into());
        }
        if v.requests.is_empty() {
            return Err("visit has no requests".into());
        }
        if v.requests.windows(2).any(|w| w[0].ts_rel_ms > w[1].ts_rel_ms) {
            return Err("requests not ordered by ts_rel_ms".into());
        }
        Ok(PageVisit { first_party: v.first_party, start_ts_ms: v.start_ts_ms, requests: v.requests })
    }
}

impl From<PageVisit> for PageVisitRecord {
    fn from(v: PageVisit) -> Self {
        PageVisitRecord { first_party: v.first_party, start_ts_ms: v.start_ts_ms, requests: v.requests }
    }
}

impl PageVisit {
    /// Requests to a registrable domain other than the visited site.
    pub fn third_party_requests(&self) -> impl Iterator<Item = &Request> {
        self.requests.iter().filter(move |r| r.registrable_domain != self.first_party)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    #[default]
    Desktop,
    Mobile,
    MiddleboxAggregate,
}

/// A user's locally collected traffic. `user_label` never leaves the device:
/// the trace file format carries only the visits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BrowsingTrace {
    pub user_label: String,
    pub device: Device,
    pub visits: Vec<PageVisit>,
}

impl BrowsingTrace {
    pub fn total_bytes(&self) -> u64 {
        self.requests().map(Request::bytes_total).sum()
    }

    pub fn total_time_ms(&self) -> u64 {
        self.requests().map(|r| r.duration_ms).sum()
    }

    pub fn total_requests(&self) -> u64 {
        self.requests().count() as u64
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.visits.iter().flat_map(|v| v.requests.iter())
    }
}

/// Parses a JSON-Lines trace file. The returned trace has an empty
/// `user_label` and the default device; callers attach their own.
pub fn parse_trace(bytes: &[u8]) -> Result<BrowsingTrace, TraceError> {
    let mut visits: Vec<PageVisit> = Vec::new();
    let mut lines = bytes.split(|&b| b == b'\n').peekable();
    let mut line_no = 0;
    while let Some(line) = lines.next() {
        line_no += 1;
        if line.is_empty() && lines.peek().is_none() {
            break;
        }
        let visit: PageVisit = serde_json::from_slice(line).map_err(|e| {
            let message = e.to_string();
            match e.classify() {
                serde_json::error::Category::Data => TraceError::Invalid { line: line_no, message },
                _ => TraceError::Malformed { line: line_no, message },
            }
        })?;
        if let Some(prev) = visits.last() {
            if prev.start_ts_ms > visit.start_ts_ms {
                return Err(TraceError::Invalid {
                    line: line_no,
                    message: "visits not ordered by start_ts_ms".into(),
                });
            }
        }
        visits.push(visit);
    }
    Ok(BrowsingTrace { user_label: String::new(), device: Device::default(), visits })
}

/// Writes the visits as JSON Lines, one compact object per line.
pub fn serialize_trace(trace: &BrowsingTrace) -> Vec<u8> {
    let mut out = Vec::new();
    for visit in &trace.visits {
        serde_json::to_writer(&mut out, visit).expect("visits always serialize");
        out.push(b'\n');
    }
    out
}
