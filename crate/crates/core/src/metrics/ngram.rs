use std::collections::HashMap;

/// Multiset of the `n`-grams of `tokens`.
pub(crate) fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for gram in tokens.windows(n) {
        *out.entry(gram).or_insert(0) += 1;
    }
    out
}

/// Number of `n`-grams in a sequence of `len` tokens.
pub(crate) fn total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Size of the multiset intersection.
pub(crate) fn overlap(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .map(|(g, &c)| c.min(large.get(g).copied().unwrap_or(0)))
        .sum()
}
