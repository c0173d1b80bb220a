//! CIDEr: TF-IDF weighted n-gram cosine similarity against the references,
//! averaged over orders 1 to 4 and scaled by 10.
//!
//! Document frequencies come from the reference sets of the corpus being
//! scored, one document per example. Inputs are expected to be stemmed.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::ngram;

pub const MAX_ORDER: usize = 4;
pub const SCALE: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct CiderModel {
    /// Per order: number of examples whose references contain the n-gram.
    doc_freq: Vec<HashMap<Vec<String>, usize>>,
    n_docs: usize,
}

/// Ordered so that float sums run in the same order in every process.
type Vector = BTreeMap<Vec<String>, f64>;

impl CiderModel {
    /// Builds document frequencies from each example's reference set.
    pub fn new(reference_sets: &[Vec<Vec<String>>]) -> Self {
        let mut doc_freq = vec![HashMap::new(); MAX_ORDER];
        for refs in reference_sets {
            for (k, df) in doc_freq.iter_mut().enumerate() {
                let grams: HashSet<&[String]> = refs
                    .iter()
                    .flat_map(|r| ngram::counts(r, k + 1).into_keys())
                    .collect();
                for g in grams {
                    *df.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        CiderModel {
            doc_freq,
            n_docs: reference_sets.len(),
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// `ln(N / max(1, df))`.
    pub fn idf(&self, gram: &[String]) -> f64 {
        let k = gram.len();
        assert!((1..=MAX_ORDER).contains(&k));
        let df = self.doc_freq[k - 1].get(gram).copied().unwrap_or(0).max(1);
        (self.n_docs as f64 / df as f64).ln()
    }

    fn vector(&self, tokens: &[String], n: usize) -> Vector {
        ngram::counts(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let w = c as f64 * self.idf(g);
                (g.to_vec(), w)
            })
            .collect()
    }

    /// Score of one candidate against its references.
    pub fn score(&self, hyp: &[String], refs: &[Vec<String>]) -> f64 {
        if refs.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for n in 1..=MAX_ORDER {
            let h = self.vector(hyp, n);
            let per_ref: f64 = refs.iter().map(|r| cosine(&h, &self.vector(r, n))).sum();
            sum += per_ref / refs.len() as f64;
        }
        SCALE * sum / MAX_ORDER as f64
    }
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let norm = |v: &Vector| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .filter_map(|(g, x)| b.get(g).map(|y| x * y))
        .sum();
    dot / (na * nb)
}
