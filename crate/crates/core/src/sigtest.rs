//! Paired significance tests for comparing two systems.
//!
//! [`permutation_test`] is Pitman's paired permutation test on per-example
//! scores: the statistic is `|mean(a) - mean(b)|` and the null
//! distribution comes from swapping the two systems' scores on any subset
//! of examples. [`corpus_metric_randomization`] applies the same swaps but
//! recomputes a corpus-level metric, which covers BLEU.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{ConceptIndex, EvalReport, GenerationRecord, Metric, MetricError, Scorer};

/// Largest `n` for which all `2^n` swap patterns are enumerated.
pub const MAX_EXACT_N: usize = 22;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_SEED: u64 = 20_220_901;
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Samples drawn from one RNG stream. Streams are fixed by chunk index so
/// the result does not depend on how chunks are spread over threads.
const CHUNK: usize = 4096;

/// Relative slack when comparing permuted statistics with the observed
/// one, so that rearranged float sums that are equal in exact arithmetic
/// count as ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SigTestError {
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no paired scores")]
    Empty,
    #[error("non-finite score in {0}")]
    NonFinite(String),
    #[error("enumeration too large: n = {0} exceeds {MAX_EXACT_N}")]
    EnumerationTooLarge(usize),
    #[error("monte carlo mode needs at least one sample")]
    NoSamples,
    #[error("records are not aligned: {0}")]
    Misaligned(String),
    #[error("metric {0} missing from a report")]
    MissingMetric(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Aligned per-example scores of two systems on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    pub metric_name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedScores {
    pub fn new(metric_name: impl Into<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, SigTestError> {
        let metric_name = metric_name.into();
        if a.len() != b.len() {
            return Err(SigTestError::LengthMismatch(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(SigTestError::Empty);
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(SigTestError::NonFinite(metric_name));
        }
        Ok(PairedScores { metric_name, a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Enumerate every swap pattern; `n` must not exceed [`MAX_EXACT_N`].
    Exact,
    /// Seeded random swap patterns with the add-one estimator.
    MonteCarlo,
}

impl Mode {
    /// Exact when feasible.
    pub fn auto(n: usize) -> Mode {
        if n <= MAX_EXACT_N {
            Mode::Exact
        } else {
            Mode::MonteCarlo
        }
    }
}

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - TIE_EPS * observed.abs().max(1.0)
}

/// Two-tailed p-value in `(0, 1]`.
pub fn permutation_test(ps: &PairedScores, mode: Mode, samples: usize, seed: u64) -> Result<f64, SigTestError> {
    let diffs: Vec<f64> = ps.a.iter().zip(&ps.b).map(|(x, y)| x - y).collect();
    match mode {
        Mode::Exact => exact(&diffs),
        Mode::MonteCarlo => monte_carlo(&diffs, samples, seed),
    }
}

/// Sums of `values[i]` over the set bits of every mask in `0..2^len`,
/// with unset bits contributing `-values[i]`.
fn signed_sums(values: &[f64]) -> Vec<f64> {
    let mut sums = vec![-values.iter().sum::<f64>()];
    for (i, v) in values.iter().enumerate() {
        let flipped: Vec<f64> = sums.iter().map(|s| s + 2.0 * v).collect();
        debug_assert_eq!(sums.len(), 1 << i);
        sums.extend(flipped);
    }
    sums
}

fn exact(diffs: &[f64]) -> Result<f64, SigTestError> {
    let n = diffs.len();
    if n > MAX_EXACT_N {
        return Err(SigTestError::EnumerationTooLarge(n));
    }
    // Every pattern is a sign vector; the observed one is all +1. Split the
    // examples in two halves and combine partial sums.
    let observed = diffs.iter().sum::<f64>().abs();
    let (lo, hi) = diffs.split_at(n / 2);
    let lo_sums = signed_sums(lo);
    let hi_sums = signed_sums(hi);
    let count: u64 = hi_sums
        .par_iter()
        .map(|h| lo_sums.iter().filter(|l| at_least((*l + h).abs(), observed)).count() as u64)
        .sum();
    Ok(count as f64 / (1u64 << n) as f64)
}

fn bit(pattern: &[u64], i: usize) -> bool {
    pattern[i / 64] >> (i % 64) & 1 == 1
}

/// Counts patterns whose statistic reaches the observed one, in parallel
/// over chunks.
fn count_extreme(
    n: usize,
    samples: usize,
    seed: u64,
    statistic: impl Fn(&[u64]) -> f64 + Sync,
    observed: f64,
) -> u64 {
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let todo = CHUNK.min(samples - chunk * CHUNK);
            let mut pattern = vec![0u64; n.div_ceil(64)];
            let mut hits = 0u64;
            for _ in 0..todo {
                for w in pattern.iter_mut() {
                    *w = rng.random();
                }
                if at_least(statistic(&pattern), observed) {
                    hits += 1;
                }
            }
            hits
        })
        .sum()
}

fn monte_carlo(diffs: &[f64], samples: usize, seed: u64) -> Result<f64, SigTestError> {
    if samples == 0 {
        return Err(SigTestError::NoSamples);
    }
    let observed = diffs.iter().sum::<f64>().abs();
    let hits = count_extreme(
        diffs.len(),
        samples,
        seed,
        |pattern| {
            diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if bit(pattern, i) { -d } else { *d })
                .sum::<f64>()
                .abs()
        },
        observed,
    );
    Ok((1 + hits) as f64 / (1 + samples) as f64)
}

/// Paired approximate randomization on a corpus-level metric: each sample
/// swaps the two systems' outputs on a random subset of examples and
/// recomputes the metric for both.
///
/// Records must cover the same ids with the same references, in the same
/// order.
pub fn corpus_metric_randomization(
    records_a: &[GenerationRecord],
    records_b: &[GenerationRecord],
    metric: Metric,
    concept_sets: Option<&ConceptIndex>,
    samples: usize,
    seed: u64,
) -> Result<f64, SigTestError> {
    check_aligned(records_a, records_b)?;
    if samples == 0 {
        return Err(SigTestError::NoSamples);
    }
    let scorer = Scorer::new(records_a, concept_sets)?;
    let stats_a = scorer.corpus_stats(metric, records_a)?;
    let stats_b = scorer.corpus_stats(metric, records_b)?;
    let n = records_a.len();
    let width = stats_a[0].len();
    let score = |pattern: Option<&[u64]>| {
        let mut ta = vec![0.0; width];
        let mut tb = vec![0.0; width];
        for i in 0..n {
            let swapped = pattern.is_some_and(|p| bit(p, i));
            let (x, y) = if swapped { (&stats_b[i], &stats_a[i]) } else { (&stats_a[i], &stats_b[i]) };
            for k in 0..width {
                ta[k] += x[k];
                tb[k] += y[k];
            }
        }
        (Scorer::finalize(metric, &ta, n) - Scorer::finalize(metric, &tb, n)).abs()
    };
    let observed = score(None);
    let hits = count_extreme(n, samples, seed, |p| score(Some(p)), observed);
    Ok((1 + hits) as f64 / (1 + samples) as f64)
}

fn check_aligned(a: &[GenerationRecord], b: &[GenerationRecord]) -> Result<(), SigTestError> {
    if a.len() != b.len() {
        return Err(SigTestError::Misaligned(format!("{} vs {} records", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(SigTestError::Empty);
    }
    for (x, y) in a.iter().zip(b) {
        if x.concept_set_id != y.concept_set_id {
            return Err(SigTestError::Misaligned(format!("{} vs {}", x.concept_set_id, y.concept_set_id)));
        }
        if x.references != y.references {
            return Err(SigTestError::Misaligned(format!("references differ for {}", x.concept_set_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigConfig {
    pub alpha: f64,
    /// `None` picks exact enumeration when `n` allows it.
    pub mode: Option<Mode>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SigConfig {
    fn default() -> Self {
        SigConfig {
            alpha: DEFAULT_ALPHA,
            mode: None,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigRow {
    pub metric: String,
    pub score_a: f64,
    pub score_b: f64,
    pub p_value: f64,
    /// Not significant at the table's alpha.
    pub starred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigTable {
    pub system_a: String,
    pub system_b: String,
    pub alpha: f64,
    pub rows: Vec<SigRow>,
}

/// True when `p` is not significant at `alpha`. `alpha = 1` declares every
/// result significant, including `p = 1`.
pub fn is_starred(p: f64, alpha: f64) -> bool {
    alpha < 1.0 && p >= alpha
}

/// `0.33*` style: two decimals, scientific below 0.01, star when not
/// significant.
pub fn format_p(p: f64, starred: bool) -> String {
    let body = if p < 0.01 { format_sci(p) } else { format!("{p:.2}") };
    if starred {
        body + "*"
    } else {
        body
    }
}

fn format_sci(x: f64) -> String {
    let s = format!("{x:.2E}");
    // Rust prints 1.58E-5; pad the exponent to two digits.
    match s.split_once('E') {
        Some((mantissa, exp)) => {
            let (sign, digits) = exp.strip_prefix('-').map_or(("+", exp), |d| ("-", d));
            format!("{mantissa}E{sign}{digits:0>2}")
        }
        None => s,
    }
}

impl SigTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{},{},p_value,significant\n", self.system_a, self.system_b);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{},{}",
                r.metric, r.score_a, r.score_b, r.p_value, !r.starred
            );
        }
        out
    }

    /// Fixed-width table: metric, both systems, p-value with `*` marking
    /// results that are not significant.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let col = |s: &str| format!("{s:>12}");
        let mut out = format!(
            "{:<width$} |{}|{}|{}\n",
            "Metric",
            col(&self.system_a),
            col(&self.system_b),
            col("p-value")
        );
        out.push_str(&"-".repeat(width + 1 + 3 * 13));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$} |{}|{}|{}",
                r.metric,
                col(&format!("{:.2}", r.score_a)),
                col(&format!("{:.2}", r.score_b)),
                col(&format_p(r.p_value, r.starred))
            );
        }
        let _ = writeln!(out, "* not significant at alpha = {}", self.alpha);
        out
    }
}

/// Tests every metric both reports share, using per-example scores (the
/// smoothed sentence proxy for BLEU).
pub fn significance_table(a: &EvalReport, b: &EvalReport, config: &SigConfig) -> Result<SigTable, SigTestError> {
    if a.example_ids != b.example_ids {
        return Err(SigTestError::Misaligned("reports cover different examples".into()));
    }
    let mut rows = Vec::new();
    for (metric, &score_a) in &a.corpus_scores {
        let score_b = *b
            .corpus_scores
            .get(metric)
            .ok_or_else(|| SigTestError::MissingMetric(metric.clone()))?;
        let missing = || SigTestError::MissingMetric(metric.clone());
        let pa = a.per_example_for(metric).ok_or_else(missing)?;
        let pb = b.per_example_for(metric).ok_or_else(missing)?;
        let ps = PairedScores::new(metric.clone(), pa.to_vec(), pb.to_vec())?;
        let mode = config.mode.unwrap_or_else(|| Mode::auto(ps.len()));
        let p_value = permutation_test(&ps, mode, config.samples, config.seed)?;
        rows.push(SigRow {
            metric: metric.clone(),
            score_a,
            score_b,
            p_value,
            starred: is_starred(p_value, config.alpha),
        });
    }
    Ok(SigTable {
        system_a: a.system_name.clone(),
        system_b: b.system_name.clone(),
        alpha: config.alpha,
        rows,
    })
}

/// Replaces the BLEU rows of `table` with p-values from
/// [`corpus_metric_randomization`] on corpus BLEU.
pub fn recompute_bleu_rows(
    table: &mut SigTable,
    records_a: &[GenerationRecord],
    records_b: &[GenerationRecord],
    config: &SigConfig,
) -> Result<(), SigTestError> {
    for row in table.rows.iter_mut() {
        if let Some(metric @ Metric::Bleu(_)) = Metric::from_name(&row.metric) {
            row.p_value = corpus_metric_randomization(records_a, records_b, metric, None, config.samples, config.seed)?;
            row.starred = is_starred(row.p_value, config.alpha);
        }
    }
    Ok(())
}
