//! Multi-reference corpus metrics: coverage, BLEU-1..4, ROUGE-1/2/L and
//! CIDEr.
//!
//! BLEU and ROUGE compare surface tokens; CIDEr compares stems. BLEU,
//! ROUGE and coverage are reported on a 0..100 scale and CIDEr on its
//! native 0..10 scale.

pub mod bleu;
pub mod cider;
mod ngram;
pub mod rouge;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::jsonl::{self, JsonlError};
use crate::ranker::caption_coverage;
use crate::textnorm::{stem_tokens, surface_tokens};

pub use bleu::{BleuScore, BleuStats};
pub use cider::CiderModel;

/// Concept keywords by concept-set id.
pub type ConceptIndex = HashMap<String, Vec<String>>;

pub fn concept_index(records: &[Record]) -> ConceptIndex {
    records
        .iter()
        .map(|r| (r.id().to_string(), r.concept_set.concepts().to_vec()))
        .collect()
}

/// Metrics that need resources this crate does not ship. Per-example
/// scores for them can be attached with [`EvalReport::add_external`].
pub const EXTERNAL_METRICS: [&str; 4] = ["spice", "meteor", "bertscore", "ppl"];

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("degenerate IDF: CIDEr needs at least 2 examples, got {0}")]
    DegenerateIdf(usize),
    #[error("unknown concept set id {0}")]
    UnknownConceptSet(String),
    #[error("no generation for concept set {0}")]
    MissingGeneration(String),
    #[error("duplicate generation for {0}")]
    DuplicateGeneration(String),
    #[error("example {0} has no references")]
    NoReferences(String),
    #[error("records are not aligned: {0}")]
    Misaligned(String),
    #[error("{name}: {reason}")]
    External { name: String, reason: String },
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// One line of a generations file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub output: String,
}

pub fn load_generations(path: &Path) -> Result<Vec<Generation>, MetricError> {
    Ok(jsonl::read(path)?)
}

/// A system output paired with the human references for its concept set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub concept_set_id: String,
    pub system_name: String,
    /// May be empty; empty outputs are scored, not rejected.
    pub output_text: String,
    pub references: Vec<String>,
}

/// Pairs generations with dataset references, one record per dataset
/// entry, ordered by id. Generations for ids outside the dataset are
/// ignored.
pub fn join_generations(
    system_name: &str,
    generations: &[Generation],
    dataset: &[Record],
) -> Result<Vec<GenerationRecord>, MetricError> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for g in generations {
        if by_id.insert(&g.id, &g.output).is_some() {
            return Err(MetricError::DuplicateGeneration(g.id.clone()));
        }
    }
    let mut out = dataset
        .iter()
        .map(|r| {
            let output = by_id
                .get(r.id())
                .ok_or_else(|| MetricError::MissingGeneration(r.id().to_string()))?;
            Ok(GenerationRecord {
                concept_set_id: r.id().to_string(),
                system_name: system_name.to_string(),
                output_text: output.to_string(),
                references: r.references.references().to_vec(),
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let extra = generations.len() - out.len();
    if extra > 0 {
        log::info!("{system_name}: ignoring {extra} generations outside the reference set");
    }
    out.sort_by(|a, b| a.concept_set_id.cmp(&b.concept_set_id));
    Ok(out)
}

/// The implemented metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Bleu(usize),
    RougeN(usize),
    RougeL,
    Cider,
    Coverage,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Bleu(1),
        Metric::Bleu(2),
        Metric::Bleu(3),
        Metric::Bleu(4),
        Metric::RougeN(1),
        Metric::RougeN(2),
        Metric::RougeL,
        Metric::Cider,
        Metric::Coverage,
    ];

    pub fn name(self) -> String {
        match self {
            Metric::Bleu(n) => format!("bleu_{n}"),
            Metric::RougeN(n) => format!("rouge_{n}"),
            Metric::RougeL => "rouge_l".to_string(),
            Metric::Cider => "cider".to_string(),
            Metric::Coverage => "coverage".to_string(),
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether the corpus score is the mean of per-example scores.
    pub fn is_decomposable(self) -> bool {
        !matches!(self, Metric::Bleu(_))
    }
}

/// Name of the per-example smoothed sentence BLEU vector for order `n`.
pub fn sentence_bleu_key(n: usize) -> String {
    format!("sentence_bleu_{n}")
}

struct Prepared {
    hyp: Vec<String>,
    refs: Vec<Vec<String>>,
    hyp_stems: Vec<String>,
    ref_stems: Vec<Vec<String>>,
}

impl Prepared {
    fn new(r: &GenerationRecord) -> Self {
        Prepared {
            hyp: surface_tokens(&r.output_text),
            refs: r.references.iter().map(|s| surface_tokens(s)).collect(),
            hyp_stems: stem_tokens(&r.output_text),
            ref_stems: r.references.iter().map(|s| stem_tokens(s)).collect(),
        }
    }
}

fn check_corpus(records: &[GenerationRecord]) -> Result<(), MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if let Some(r) = records.iter().find(|r| r.references.is_empty()) {
        return Err(MetricError::NoReferences(r.concept_set_id.clone()));
    }
    Ok(())
}

/// Per-example sufficient statistics for every metric, from which corpus
/// scores are computed. Shared by evaluation and randomization tests.
pub struct Scorer<'a> {
    cider: Option<CiderModel>,
    concepts: Option<&'a ConceptIndex>,
}

impl<'a> Scorer<'a> {
    /// CIDEr document frequencies come from `records`' references; with a
    /// single record CIDEr is unavailable.
    pub fn new(records: &[GenerationRecord], concepts: Option<&'a ConceptIndex>) -> Result<Self, MetricError> {
        check_corpus(records)?;
        let cider = (records.len() >= 2).then(|| {
            let stems: Vec<Vec<Vec<String>>> = records
                .par_iter()
                .map(|r| r.references.iter().map(|s| stem_tokens(s)).collect())
                .collect();
            CiderModel::new(&stems)
        });
        Ok(Scorer { cider, concepts })
    }

    fn cider_model(&self) -> Result<&CiderModel, MetricError> {
        self.cider.as_ref().ok_or(MetricError::DegenerateIdf(1))
    }

    fn concepts_of(&self, id: &str) -> Result<&[String], MetricError> {
        self.concepts
            .and_then(|c| c.get(id))
            .map(Vec::as_slice)
            .ok_or_else(|| MetricError::UnknownConceptSet(id.to_string()))
    }

    fn stats_prepared(&self, metric: Metric, rec: &GenerationRecord, p: &Prepared) -> Result<Vec<f64>, MetricError> {
        Ok(match metric {
            Metric::Bleu(_) => BleuStats::compute(&p.hyp, &p.refs).to_vec(),
            Metric::RougeN(n) => vec![100.0 * rouge::rouge_n(&p.hyp, &p.refs, n)],
            Metric::RougeL => vec![100.0 * rouge::rouge_l(&p.hyp, &p.refs)],
            Metric::Cider => vec![self.cider_model()?.score(&p.hyp_stems, &p.ref_stems)],
            Metric::Coverage => {
                let concepts = self.concepts_of(&rec.concept_set_id)?;
                vec![100.0 * caption_coverage(concepts, &rec.output_text)]
            }
        })
    }

    /// Statistics of one example for `metric`.
    pub fn example_stats(&self, metric: Metric, rec: &GenerationRecord) -> Result<Vec<f64>, MetricError> {
        self.stats_prepared(metric, rec, &Prepared::new(rec))
    }

    /// Statistics of every example, in record order.
    pub fn corpus_stats(&self, metric: Metric, records: &[GenerationRecord]) -> Result<Vec<Vec<f64>>, MetricError> {
        records
            .par_iter()
            .map(|r| self.example_stats(metric, r))
            .collect()
    }

    /// Corpus score from the element-wise sum of example statistics.
    pub fn finalize(metric: Metric, totals: &[f64], n_examples: usize) -> f64 {
        match metric {
            Metric::Bleu(n) => bleu::from_stats(&BleuStats::from_slice(totals), n).score,
            _ => totals[0] / n_examples as f64,
        }
    }
}

fn sum_stats(stats: &[Vec<f64>]) -> Vec<f64> {
    let mut totals = vec![0.0; stats.first().map_or(0, Vec::len)];
    for s in stats {
        for (t, x) in totals.iter_mut().zip(s) {
            *t += x;
        }
    }
    totals
}

/// Corpus BLEU-n over all records.
pub fn bleu(records: &[GenerationRecord], n: usize) -> Result<BleuScore, MetricError> {
    check_corpus(records)?;
    let stats: Vec<BleuStats> = records
        .par_iter()
        .map(|r| BleuStats::compute(&surface_tokens(&r.output_text), &reference_tokens(r)))
        .collect();
    let mut total = BleuStats::default();
    for s in &stats {
        total.add(s);
    }
    Ok(bleu::from_stats(&total, n))
}

fn reference_tokens(r: &GenerationRecord) -> Vec<Vec<String>> {
    r.references.iter().map(|s| surface_tokens(s)).collect()
}

fn mean_metric(records: &[GenerationRecord], concepts: Option<&ConceptIndex>, metric: Metric) -> Result<f64, MetricError> {
    let scorer = Scorer::new(records, concepts)?;
    let stats = scorer.corpus_stats(metric, records)?;
    Ok(Scorer::finalize(metric, &sum_stats(&stats), records.len()))
}

/// Mean ROUGE-n F1 (best reference per example), ×100.
pub fn rouge_n(records: &[GenerationRecord], n: usize) -> Result<f64, MetricError> {
    assert!(n == 1 || n == 2, "ROUGE-N is defined here for n in {{1, 2}}");
    mean_metric(records, None, Metric::RougeN(n))
}

/// Mean ROUGE-L F1 (best reference per example), ×100.
pub fn rouge_l(records: &[GenerationRecord]) -> Result<f64, MetricError> {
    mean_metric(records, None, Metric::RougeL)
}

/// Mean CIDEr; needs at least two examples.
pub fn cider(records: &[GenerationRecord]) -> Result<f64, MetricError> {
    check_corpus(records)?;
    if records.len() < 2 {
        return Err(MetricError::DegenerateIdf(records.len()));
    }
    mean_metric(records, None, Metric::Cider)
}

/// Mean fraction of concepts covered by the output, ×100.
pub fn corpus_coverage(records: &[GenerationRecord], concept_sets: &ConceptIndex) -> Result<f64, MetricError> {
    mean_metric(records, Some(concept_sets), Metric::Coverage)
}

/// Corpus and per-example scores of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system_name: String,
    /// Concept-set ids in the order of every per-example vector.
    pub example_ids: Vec<String>,
    pub corpus_scores: BTreeMap<String, f64>,
    /// Aligned with `example_ids`. Corpus BLEU has no per-example form;
    /// `sentence_bleu_n` holds add-one smoothed sentence BLEU instead.
    pub per_example_scores: BTreeMap<String, Vec<f64>>,
    pub flags: Vec<String>,
}

impl EvalReport {
    /// Per-example scores to use when testing `metric` for significance.
    pub fn per_example_for(&self, metric: &str) -> Option<&[f64]> {
        if let Some(v) = self.per_example_scores.get(metric) {
            return Some(v);
        }
        let n = metric.strip_prefix("bleu_")?.parse().ok()?;
        self.per_example_scores.get(&sentence_bleu_key(n)).map(Vec::as_slice)
    }

    /// Attaches externally computed per-example scores for one of
    /// [`EXTERNAL_METRICS`], aligned with `example_ids`. The corpus score is
    /// their mean.
    pub fn add_external(&mut self, name: &str, scores: Vec<f64>) -> Result<(), MetricError> {
        let err = |reason: &str| MetricError::External {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if !EXTERNAL_METRICS.contains(&name) {
            return Err(err("not an external metric name"));
        }
        if scores.len() != self.example_ids.len() {
            return Err(err("score count does not match the number of examples"));
        }
        if scores.is_empty() || scores.iter().any(|x| !x.is_finite()) {
            return Err(err("scores must be finite"));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        self.corpus_scores.insert(name.to_string(), mean);
        self.per_example_scores.insert(name.to_string(), scores);
        Ok(())
    }

    /// `metric,value` rows in metric-name order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in &self.corpus_scores {
            out.push_str(&format!("{name},{value:.6}\n"));
        }
        out
    }
}

/// Corpus table with one column per system, rows in metric-name order.
pub fn corpus_table_csv(reports: &[EvalReport]) -> String {
    let names: std::collections::BTreeSet<&String> = reports.iter().flat_map(|r| r.corpus_scores.keys()).collect();
    let mut out = String::from("metric");
    for r in reports {
        out.push(',');
        out.push_str(&r.system_name);
    }
    out.push('\n');
    for name in names {
        out.push_str(name);
        for r in reports {
            out.push(',');
            if let Some(v) = r.corpus_scores.get(name) {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Runs every implemented metric over one system's records.
pub fn evaluate_system(records: &[GenerationRecord], concept_sets: &ConceptIndex) -> Result<EvalReport, MetricError> {
    let scorer = Scorer::new(records, Some(concept_sets))?;
    let names: HashSet<&str> = records.iter().map(|r| r.system_name.as_str()).collect();
    if names.len() > 1 {
        return Err(MetricError::Misaligned("records from more than one system".into()));
    }
    let prepared: Vec<Prepared> = records.par_iter().map(Prepared::new).collect();
    let mut report = EvalReport {
        system_name: records[0].system_name.clone(),
        example_ids: records.iter().map(|r| r.concept_set_id.clone()).collect(),
        corpus_scores: BTreeMap::new(),
        per_example_scores: BTreeMap::new(),
        flags: Vec::new(),
    };
    for metric in Metric::ALL {
        if metric == Metric::Cider && records.len() < 2 {
            return Err(MetricError::DegenerateIdf(records.len()));
        }
        let stats: Vec<Vec<f64>> = records
            .par_iter()
            .zip(prepared.par_iter())
            .map(|(r, p)| scorer.stats_prepared(metric, r, p))
            .collect::<Result<_, _>>()?;
        let totals = sum_stats(&stats);
        match metric {
            Metric::Bleu(n) => {
                let score = bleu::from_stats(&BleuStats::from_slice(&totals), n);
                if score.zero_precision {
                    report.flags.push(format!("{}: zero n-gram precision, score set to 0", metric.name()));
                }
                report.corpus_scores.insert(metric.name(), score.score);
                let sentence: Vec<f64> = stats
                    .iter()
                    .map(|s| bleu::smoothed_sentence(&BleuStats::from_slice(s), n))
                    .collect();
                report.per_example_scores.insert(sentence_bleu_key(n), sentence);
            }
            _ => {
                report
                    .corpus_scores
                    .insert(metric.name(), Scorer::finalize(metric, &totals, records.len()));
                report
                    .per_example_scores
                    .insert(metric.name(), stats.into_iter().map(|s| s[0]).collect());
            }
        }
    }
    report
        .flags
        .push("sentence_bleu_n: add-one smoothed sentence BLEU, for significance testing only".into());
    Ok(report)
}
