use std::collections::BTreeMap;

/// Shannon entropy of the character distribution of `value`, in bits per
/// character. Empty and single-character strings score 0.
pub fn char_entropy(value: &str) -> f64 {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut n = 0usize;
    for c in value.chars() {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    counts.values().fold(0.0, |acc, &c| {
        let p = c as f64 / n;
        acc + p * -p.log2()
    })
}
