//! NTC sweeps: coverage-vs-NTC curves, metric-vs-NTC tables and the choice
//! of NTC from dev results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::EvalReport;
use crate::ranker::{aggregate_coverage, mean_caption_coverage, CaptionSet, Ntc};

/// Dev metric that decides the NTC.
pub const SELECTION_METRIC: &str = "rouge_2";
pub const AGGREGATE_COVERAGE: &str = "aggregate_coverage";
pub const MEAN_CAPTION_COVERAGE: &str = "mean_caption_coverage";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SweepError {
    #[error("no NTC values given")]
    NoNtcValues,
    #[error("NTC values must be strictly ascending")]
    NotAscending,
    #[error("no dev results to select from")]
    NoCandidates,
    #[error("metric {metric} missing for NTC {ntc}")]
    MissingMetric { ntc: usize, metric: String },
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub ntc: usize,
    pub metric_name: String,
    pub mean: f64,
    /// Over seeds; zero for quantities with no seed.
    pub stddev: f64,
}

fn check_ntcs(ntcs: &[Ntc]) -> Result<(), SweepError> {
    if ntcs.is_empty() {
        return Err(SweepError::NoNtcValues);
    }
    if ntcs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SweepError::NotAscending);
    }
    Ok(())
}

fn corpus_mean(sets: &[CaptionSet], f: impl Fn(&CaptionSet) -> f64) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    100.0 * sets.iter().map(f).sum::<f64>() / sets.len() as f64
}

/// Corpus mean of aggregate coverage, out of 100, at each NTC. Sets must
/// already be ranked.
pub fn coverage_curve(sets: &[CaptionSet], ntcs: &[Ntc]) -> Result<Vec<(Ntc, f64)>, SweepError> {
    check_ntcs(ntcs)?;
    Ok(ntcs
        .iter()
        .map(|&ntc| (ntc, corpus_mean(sets, |cs| aggregate_coverage(cs, ntc))))
        .collect())
}

/// Both coverage curves as table rows: the aggregate one and the mean of
/// per-caption coverage over the top NTC captions.
pub fn coverage_rows(sets: &[CaptionSet], ntcs: &[Ntc]) -> Result<Vec<CurveRow>, SweepError> {
    check_ntcs(ntcs)?;
    let mut rows = Vec::new();
    for &ntc in ntcs {
        for (name, value) in [
            (AGGREGATE_COVERAGE, corpus_mean(sets, |cs| aggregate_coverage(cs, ntc))),
            (MEAN_CAPTION_COVERAGE, corpus_mean(sets, |cs| mean_caption_coverage(cs, ntc))),
        ] {
            rows.push(CurveRow {
                ntc: ntc.get(),
                metric_name: name.to_string(),
                mean: value,
                stddev: 0.0,
            });
        }
    }
    Ok(rows)
}

/// A dev evaluation of one model trained with a given NTC and seed.
#[derive(Debug, Clone)]
pub struct NtcRun {
    pub ntc: Ntc,
    pub seed: u64,
    pub report: EvalReport,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed mean and sample standard deviation of every corpus metric, per NTC.
/// Rows are ordered by NTC, then metric name.
pub fn metric_rows(runs: &[NtcRun]) -> Vec<CurveRow> {
    let mut grouped: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (name, &value) in &run.report.corpus_scores {
            grouped.entry((run.ntc.get(), name)).or_default().push(value);
        }
    }
    grouped
        .into_iter()
        .map(|((ntc, name), values)| {
            let (mean, stddev) = mean_std(&values);
            CurveRow {
                ntc,
                metric_name: name.to_string(),
                mean,
                stddev,
            }
        })
        .collect()
}

/// NTC with the highest seed-averaged `metric`; ties go to the smaller NTC.
pub fn select_ntc_by(runs: &[NtcRun], metric: &str) -> Result<Ntc, SweepError> {
    let mut by_ntc: BTreeMap<Ntc, Vec<f64>> = BTreeMap::new();
    for run in runs {
        let value = run.report.corpus_scores.get(metric).ok_or_else(|| SweepError::MissingMetric {
            ntc: run.ntc.get(),
            metric: metric.to_string(),
        })?;
        by_ntc.entry(run.ntc).or_default().push(*value);
    }
    let mut best: Option<(Ntc, f64)> = None;
    // Ascending NTC order, so a strict comparison keeps the smaller on ties.
    for (ntc, values) in by_ntc {
        let (mean, _) = mean_std(&values);
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((ntc, mean));
        }
    }
    best.map(|(ntc, _)| ntc).ok_or(SweepError::NoCandidates)
}

/// [`select_ntc_by`] on dev ROUGE-2.
pub fn select_ntc(runs: &[NtcRun]) -> Result<Ntc, SweepError> {
    select_ntc_by(runs, SELECTION_METRIC)
}

pub fn rows_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("ntc,metric_name,mean,stddev\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.ntc, r.metric_name, r.mean, r.stddev);
    }
    out
}
