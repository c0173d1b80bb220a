//! Corpus BLEU and smoothed sentence BLEU.

use std::collections::HashMap;

use super::ngram;

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one example for BLEU up to order 4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order.
    pub matches: [usize; MAX_ORDER],
    /// Candidate n-grams per order.
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    /// Length of the reference closest in length to the candidate, the
    /// shorter one on ties.
    pub ref_len: usize,
}

impl BleuStats {
    pub fn compute(hyp: &[String], refs: &[Vec<String>]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: closest_ref_len(hyp.len(), refs),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram::counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram::counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = ngram::total(hyp.len(), n);
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for k in 0..MAX_ORDER {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Flattened as `[m1..m4, t1..t4, hyp_len, ref_len]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.matches.iter().map(|&x| x as f64).collect();
        v.extend(self.totals.iter().map(|&x| x as f64));
        v.push(self.hyp_len as f64);
        v.push(self.ref_len as f64);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut s = BleuStats::default();
        for k in 0..MAX_ORDER {
            s.matches[k] = v[k] as usize;
            s.totals[k] = v[MAX_ORDER + k] as usize;
        }
        s.hyp_len = v[2 * MAX_ORDER] as usize;
        s.ref_len = v[2 * MAX_ORDER + 1] as usize;
        s
    }
}

fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0)
}

/// BLEU-n on the 0..100 scale plus whether some precision was zero (in
/// which case the score is 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub zero_precision: bool,
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    let ratio = ref_len as f64 / hyp_len as f64;
    (1.0 - ratio).min(0.0).exp()
}

/// Unsmoothed BLEU from summed statistics.
pub fn from_stats(stats: &BleuStats, n: usize) -> BleuScore {
    assert!((1..=MAX_ORDER).contains(&n), "BLEU order must be 1..=4");
    let zero = (0..n).any(|k| stats.matches[k] == 0 || stats.totals[k] == 0);
    if zero || stats.hyp_len == 0 {
        return BleuScore {
            score: 0.0,
            zero_precision: true,
        };
    }
    let log_p: f64 = (0..n)
        .map(|k| (stats.matches[k] as f64 / stats.totals[k] as f64).ln())
        .sum::<f64>()
        / n as f64;
    BleuScore {
        score: 100.0 * brevity_penalty(stats.hyp_len, stats.ref_len) * log_p.exp(),
        zero_precision: false,
    }
}

/// Sentence BLEU with add-one smoothing on orders 2 and above. Used only
/// as a per-example proxy for significance testing.
pub fn smoothed_sentence(stats: &BleuStats, n: usize) -> f64 {
    assert!((1..=MAX_ORDER).contains(&n), "BLEU order must be 1..=4");
    if stats.hyp_len == 0 || stats.matches[0] == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..n)
        .map(|k| {
            let (m, t) = (stats.matches[k] as f64, stats.totals[k] as f64);
            if k == 0 {
                (m / t).ln()
            } else {
                ((m + 1.0) / (t + 1.0)).ln()
            }
        })
        .sum::<f64>()
        / n as f64;
    100.0 * brevity_penalty(stats.hyp_len, stats.ref_len) * log_p.exp()
}
