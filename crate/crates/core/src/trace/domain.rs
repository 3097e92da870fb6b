use std::collections::BTreeSet;
use std::sync::OnceLock;

/// A set of public suffixes such as `co.uk`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuffixList(BTreeSet<String>);

impl SuffixList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The small list shipped with the crate.
    pub fn bundled() -> &'static SuffixList {
        static LIST: OnceLock<SuffixList> = OnceLock::new();
        LIST.get_or_init(|| {
            include_str!("suffixes.txt")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect()
        })
    }

    pub fn contains(&self, suffix: &str) -> bool {
        self.0.contains(suffix)
    }
}

impl<S: Into<String>> FromIterator<S> for SuffixList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// Public suffix plus one label. Hosts matching no listed suffix fall back to
/// their last two labels; single-label hosts are returned unchanged.
pub fn registrable_domain(host: &str, suffixes: &SuffixList) -> String {
    let labels: Vec<&str> = host.split('.').collect();
    if labels.len() <= 1 {
        return host.to_string();
    }
    // longest listed suffix wins
    for i in 0..labels.len() {
        if suffixes.contains(&labels[i..].join(".")) {
            return labels[i.saturating_sub(1)..].join(".");
        }
    }
    labels[labels.len() - 2..].join(".")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_label_fallback() {
        assert_eq!(registrable_domain("a.b.example.com", &SuffixList::empty()), "example.com");
        assert_eq!(registrable_domain("example.com", &SuffixList::empty()), "example.com");
    }

    #[test]
    fn suffix_list_lookup() {
        let list: SuffixList = ["co.uk"].into_iter().collect();
        assert_eq!(registrable_domain("x.y.co.uk", &list), "y.co.uk");
        assert_eq!(registrable_domain("x.y.co.uk", SuffixList::bundled()), "y.co.uk");
        assert_eq!(registrable_domain("co.uk", &list), "co.uk");
        // without the list the same host collapses onto the suffix
        assert_eq!(registrable_domain("x.y.co.uk", &SuffixList::empty()), "co.uk");
    }

    #[test]
    fn single_label_returns_itself() {
        assert_eq!(registrable_domain("localhost", &SuffixList::empty()), "localhost");
    }

    #[test]
    fn bundled_list_loaded() {
        let list = SuffixList::bundled();
        assert!(list.contains("co.uk") && list.contains("github.io"));
        assert!(!list.contains("# Minimal public-suffix list bundled with the testbed. One suffix per line."));
    }

    proptest! {
        #[test]
        fn idempotent(labels in prop::collection::vec("[a-z0-9]{1,6}|co|uk|github|io", 1..6)) {
            let host = labels.join(".");
            for list in [SuffixList::empty(), SuffixList::bundled().clone()] {
                let once = registrable_domain(&host, &list);
                prop_assert!(host.ends_with(&once));
                prop_assert_eq!(registrable_domain(&once, &list), once.clone());
            }
        }
    }
}
