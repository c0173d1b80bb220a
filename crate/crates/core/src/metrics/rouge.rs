//! ROUGE-N and ROUGE-L F1, best over references.

use super::ngram;

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// N-gram overlap F1 against one reference.
pub fn rouge_n_single(hyp: &[String], reference: &[String], n: usize) -> f64 {
    let (h_total, r_total) = (ngram::total(hyp.len(), n), ngram::total(reference.len(), n));
    if h_total == 0 || r_total == 0 {
        return 0.0;
    }
    let hits = ngram::overlap(&ngram::counts(hyp, n), &ngram::counts(reference, n)) as f64;
    f1(hits / h_total as f64, hits / r_total as f64)
}

pub fn rouge_n(hyp: &[String], refs: &[Vec<String>], n: usize) -> f64 {
    refs.iter()
        .map(|r| rouge_n_single(hyp, r, n))
        .fold(0.0, f64::max)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_single(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hyp, reference) as f64;
    f1(lcs / hyp.len() as f64, lcs / reference.len() as f64)
}

pub fn rouge_l(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter().map(|r| rouge_l_single(hyp, r)).fold(0.0, f64::max)
}
