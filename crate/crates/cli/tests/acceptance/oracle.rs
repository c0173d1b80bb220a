//! Brute-force reference implementations of the corpus metrics.
//!
//! Written for clarity, not speed: n-grams are listed position by position,
//! counts come from linear scans and the longest common subsequence is
//! found by trying every subsequence of the candidate. Inputs are plain
//! whitespace-split tokens whose stems are themselves, so no normalization
//! or stemming happens here.

pub type Tokens = Vec<String>;

/// One example: candidate tokens and reference token lists.
pub struct Example {
    pub hyp: Tokens,
    pub refs: Vec<Tokens>,
}

fn grams(tokens: &[String], n: usize) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(&tokens[i..i + n]);
        i += 1;
    }
    out
}

fn occurrences(gram: &[String], tokens: &[String]) -> usize {
    grams(tokens, gram.len()).into_iter().filter(|g| *g == gram).count()
}

fn distinct<'a>(list: &[&'a [String]]) -> Vec<&'a [String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g);
        }
    }
    out
}

/// Corpus BLEU-n, 0..100, no smoothing; 0 when any order has no match.
pub fn bleu(corpus: &[Example], n: usize) -> f64 {
    let mut matches = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for ex in corpus {
        c += ex.hyp.len();
        // Closest reference length, shorter on ties.
        let mut best = ex.refs[0].len();
        for rf in &ex.refs {
            let (d, bd) = (rf.len().abs_diff(ex.hyp.len()), best.abs_diff(ex.hyp.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
        for k in 1..=n {
            let hyp_grams = grams(&ex.hyp, k);
            totals[k - 1] += hyp_grams.len();
            for g in distinct(&hyp_grams) {
                let in_hyp = occurrences(g, &ex.hyp);
                let max_ref = ex.refs.iter().map(|rf| occurrences(g, rf)).max().unwrap_or(0);
                matches[k - 1] += in_hyp.min(max_ref);
            }
        }
    }
    if c == 0 || (0..n).any(|k| matches[k] == 0 || totals[k] == 0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        log_sum += (matches[k] as f64 / totals[k] as f64).ln();
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_sum / n as f64).exp()
}

fn f1(hits: f64, hyp_total: f64, ref_total: f64) -> f64 {
    if hits == 0.0 {
        return 0.0;
    }
    let (p, r) = (hits / hyp_total, hits / ref_total);
    2.0 * p * r / (p + r)
}

fn rouge_n_pair(hyp: &[String], rf: &[String], n: usize) -> f64 {
    let (hg, rg) = (grams(hyp, n), grams(rf, n));
    if hg.is_empty() || rg.is_empty() {
        return 0.0;
    }
    let hits: usize = distinct(&hg)
        .into_iter()
        .map(|g| occurrences(g, hyp).min(occurrences(g, rf)))
        .sum();
    f1(hits as f64, hg.len() as f64, rg.len() as f64)
}

/// Mean over examples of the best-reference ROUGE-n F1, 0..100.
pub fn rouge_n(corpus: &[Example], n: usize) -> f64 {
    let sum: f64 = corpus
        .iter()
        .map(|ex| ex.refs.iter().map(|rf| rouge_n_pair(&ex.hyp, rf, n)).fold(0.0, f64::max))
        .sum();
    100.0 * sum / corpus.len() as f64
}

fn is_subsequence(sub: &[&String], seq: &[String]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// LCS length by trying every subsequence of `a`.
fn lcs_brute(a: &[String], b: &[String]) -> usize {
    assert!(a.len() < 20, "brute-force LCS is for short inputs");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = size;
        }
    }
    best
}

/// Mean over examples of the best-reference ROUGE-L F1, 0..100.
pub fn rouge_l(corpus: &[Example]) -> f64 {
    let sum: f64 = corpus
        .iter()
        .map(|ex| {
            ex.refs
                .iter()
                .map(|rf| {
                    if ex.hyp.is_empty() || rf.is_empty() {
                        0.0
                    } else {
                        f1(lcs_brute(&ex.hyp, rf) as f64, ex.hyp.len() as f64, rf.len() as f64)
                    }
                })
                .fold(0.0, f64::max)
        })
        .sum();
    100.0 * sum / corpus.len() as f64
}

/// TF-IDF vector as a list of (gram, weight), one entry per distinct gram.
fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> Vec<(&'a [String], f64)> {
    distinct(&grams(tokens, n))
        .into_iter()
        .map(|g| (g, occurrences(g, tokens) as f64 * idf(g)))
        .collect()
}

fn cosine(a: &[(&[String], f64)], b: &[(&[String], f64)]) -> f64 {
    let norm = |v: &[(&[String], f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for (g, w) in a {
        for (h, x) in b {
            if g == h {
                dot += w * x;
            }
        }
    }
    dot / (na * nb)
}

/// Mean CIDEr over examples: 10 × mean over orders 1..4 of the mean cosine
/// to each reference, with IDF = ln(N / max(1, df)) over reference sets.
pub fn cider(corpus: &[Example]) -> f64 {
    let n_docs = corpus.len() as f64;
    let df = |g: &[String]| {
        corpus
            .iter()
            .filter(|ex| ex.refs.iter().any(|rf| occurrences(g, rf) > 0))
            .count()
            .max(1) as f64
    };
    let idf = |g: &[String]| (n_docs / df(g)).ln();
    let mut total = 0.0;
    for ex in corpus {
        let mut per_order = 0.0;
        for n in 1..=4 {
            let h = tfidf(&ex.hyp, n, &idf);
            let mut sum = 0.0;
            for rf in &ex.refs {
                sum += cosine(&h, &tfidf(rf, n, &idf));
            }
            per_order += sum / ex.refs.len() as f64;
        }
        total += 10.0 * per_order / 4.0;
    }
    total / corpus.len() as f64
}
