use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::TrackerReport;

pub const RULESET_HEADER: &str = "! ippo-ruleset v1";

/// Adblock-style domain block list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    /// One `||domain^` rule per tracker domain, sorted by domain.
    pub rules: Vec<String>,
}

impl RuleSet {
    pub fn from_domains<'a>(domains: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = domains.into_iter().collect();
        Self { rules: sorted.into_iter().map(|d| format!("||{d}^")).collect() }
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.trim_start_matches("||").trim_end_matches('^'))
    }

    pub fn render(&self) -> String {
        let mut out = String::from(RULESET_HEADER);
        out.push('\n');
        for rule in &self.rules {
            out.push_str(rule);
            out.push('\n');
        }
        out
    }
}

pub fn generate_ruleset(report: &TrackerReport) -> RuleSet {
    RuleSet::from_domains(report.domains.iter().filter(|(_, v)| v.is_tracker).map(|(d, _)| d.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_only_when_empty() {
        assert_eq!(RuleSet::default().render(), "! ippo-ruleset v1\n");
    }

    #[test]
    fn sorted_rendering() {
        let r = RuleSet::from_domains(["t2.net", "t1.com"]);
        assert_eq!(r.render(), "! ippo-ruleset v1\n||t1.com^\n||t2.net^\n");
        assert_eq!(r.domains().collect::<Vec<_>>(), ["t1.com", "t2.net"]);
    }

    proptest! {
        #[test]
        fn deterministic_sorted_prefix_stable(
            domains in prop::collection::btree_set("[a-z]{1,8}\\.(com|net|org)", 0..20),
            extra in "[a-z]{1,8}\\.(com|net|org)",
        ) {
            let forward = RuleSet::from_domains(domains.iter().map(String::as_str));
            let backward = RuleSet::from_domains(domains.iter().rev().map(String::as_str));
            prop_assert_eq!(forward.render(), backward.render());
            let listed: Vec<&str> = forward.domains().collect();
            prop_assert!(listed.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(forward.rules.len(), domains.len());
            let text = forward.render();
            prop_assert_eq!(text.lines().next(), Some(RULESET_HEADER));
            // appending a domain that sorts last only appends a line
            if domains.iter().all(|d| *d < extra) {
                let grown = RuleSet::from_domains(domains.iter().map(String::as_str).chain([extra.as_str()]));
                prop_assert!(grown.render().starts_with(&text));
            }
        }
    }
}
