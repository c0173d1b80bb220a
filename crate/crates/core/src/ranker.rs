//! Coverage-based caption reranking and top-NTC selection.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::num::NonZeroUsize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caption::Caption;
use crate::dataset::ConceptSet;
use crate::textnorm::{concept_stem, tokenize};

/// Number of top captions: how many ranked captions feed one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Ntc(NonZeroUsize);

impl Ntc {
    pub fn new(n: usize) -> Option<Ntc> {
        NonZeroUsize::new(n).map(Ntc)
    }

    pub fn get(self) -> usize {
        self.0.get()
    }
}

impl TryFrom<usize> for Ntc {
    type Error = String;

    fn try_from(n: usize) -> Result<Self, Self::Error> {
        Ntc::new(n).ok_or_else(|| "NTC must be at least 1".to_string())
    }
}

impl From<Ntc> for usize {
    fn from(n: Ntc) -> usize {
        n.get()
    }
}

impl fmt::Display for Ntc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for Ntc {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: usize = s.parse().map_err(|e| format!("invalid NTC {s:?}: {e}"))?;
        Ntc::try_from(n)
    }
}

/// The NTC grid searched when tuning.
pub const NTC_GRID: [usize; 6] = [1, 2, 3, 5, 7, 10];

/// Number of concepts covered by the text's tokens.
fn covered_count(concept_stems: &[String], token_stems: &HashSet<String>) -> usize {
    concept_stems.iter().filter(|c| token_stems.contains(*c)).count()
}

fn token_stems(text: &str) -> HashSet<String> {
    tokenize(text).into_iter().map(|t| t.stem().to_string()).collect()
}

/// Fraction of `concepts` covered by `caption_text`, in `[0, 1]`.
pub fn caption_coverage(concepts: &[String], caption_text: &str) -> f64 {
    assert!(!concepts.is_empty(), "coverage needs at least one concept");
    let stems: Vec<String> = concepts.iter().map(|c| concept_stem(c)).collect();
    covered_count(&stems, &token_stems(caption_text)) as f64 / concepts.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCaption {
    pub caption: Caption,
    pub coverage: f64,
}

/// Captions of one concept set, in search order and in coverage order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSet {
    pub concept_set_id: String,
    pub concepts: Vec<String>,
    /// Search-rank order.
    pub captions: Vec<Caption>,
    /// Descending coverage; empty until [`rank_captions`] runs.
    pub ranked: Vec<RankedCaption>,
    pub ntc_selected: Option<Ntc>,
}

impl CaptionSet {
    /// Captions are put in search-rank order.
    pub fn new(concept_set_id: impl Into<String>, concepts: Vec<String>, mut captions: Vec<Caption>) -> Self {
        captions.sort_by_key(|c| c.source_rank);
        CaptionSet {
            concept_set_id: concept_set_id.into(),
            concepts,
            captions,
            ranked: Vec::new(),
            ntc_selected: None,
        }
    }

    pub fn is_ranked(&self) -> bool {
        self.ranked.len() == self.captions.len()
    }
}

/// Stable sort of the captions by descending coverage. Captions with equal
/// coverage keep their search order.
pub fn rank_captions(mut cs: CaptionSet) -> CaptionSet {
    let stems: Vec<String> = cs.concepts.iter().map(|c| concept_stem(c)).collect();
    let n = cs.concepts.len().max(1) as f64;
    let mut scored: Vec<(usize, &Caption)> = cs
        .captions
        .iter()
        .map(|c| (covered_count(&stems, &token_stems(&c.text)), c))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0));
    cs.ranked = scored
        .into_iter()
        .map(|(count, c)| RankedCaption {
            caption: c.clone(),
            coverage: count as f64 / n,
        })
        .collect();
    cs
}

/// The first `min(ntc, |ranked|)` ranked captions.
pub fn select_top(cs: &CaptionSet, ntc: Ntc) -> Vec<&Caption> {
    cs.ranked.iter().take(ntc.get()).map(|r| &r.caption).collect()
}

/// Fraction of concepts covered by the union of the top-`ntc` captions.
pub fn aggregate_coverage(cs: &CaptionSet, ntc: Ntc) -> f64 {
    if cs.concepts.is_empty() {
        return 0.0;
    }
    let stems: Vec<String> = cs.concepts.iter().map(|c| concept_stem(c)).collect();
    let union: HashSet<String> = select_top(cs, ntc)
        .into_iter()
        .flat_map(|c| token_stems(&c.text))
        .collect();
    covered_count(&stems, &union) as f64 / cs.concepts.len() as f64
}

/// Mean per-caption coverage of the top-`ntc` captions; zero when there are
/// none.
pub fn mean_caption_coverage(cs: &CaptionSet, ntc: Ntc) -> f64 {
    let top: Vec<f64> = cs.ranked.iter().take(ntc.get()).map(|r| r.coverage).collect();
    if top.is_empty() {
        0.0
    } else {
        top.iter().sum::<f64>() / top.len() as f64
    }
}

/// Groups captions by concept set and ranks each group. Every concept set
/// gets an entry, possibly with no captions; captions for unknown ids are
/// dropped.
pub fn rank_all(sets: &[ConceptSet], captions: &[Caption]) -> Vec<CaptionSet> {
    let mut grouped: HashMap<&str, Vec<Caption>> = HashMap::new();
    for c in captions {
        grouped.entry(c.concept_set_id.as_str()).or_default().push(c.clone());
    }
    let known: HashSet<&str> = sets.iter().map(ConceptSet::id).collect();
    let orphans = grouped.keys().filter(|k| !known.contains(*k)).count();
    if orphans > 0 {
        log::warn!("ignoring captions for {orphans} unknown concept sets");
    }
    let mut out: Vec<CaptionSet> = sets
        .par_iter()
        .map(|s| {
            let caps = grouped.get(s.id()).cloned().unwrap_or_default();
            rank_captions(CaptionSet::new(s.id(), s.concepts().to_vec(), caps))
        })
        .collect();
    out.sort_by(|a, b| a.concept_set_id.cmp(&b.concept_set_id));
    out
}

/// One caption in the ranked manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub source_rank: u32,
    pub text: String,
    pub coverage: f64,
}

/// One line of the ranked-caption manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub concept_set_id: String,
    pub captions: Vec<RankedEntry>,
}

impl From<&CaptionSet> for RankedRecord {
    fn from(cs: &CaptionSet) -> Self {
        RankedRecord {
            concept_set_id: cs.concept_set_id.clone(),
            captions: cs
                .ranked
                .iter()
                .map(|r| RankedEntry {
                    source_rank: r.caption.source_rank,
                    text: r.caption.text.clone(),
                    coverage: r.coverage,
                })
                .collect(),
        }
    }
}

impl RankedRecord {
    /// Rebuilds the caption set, trusting the stored order and coverage.
    pub fn into_caption_set(self, concepts: Vec<String>) -> CaptionSet {
        let ranked: Vec<RankedCaption> = self
            .captions
            .into_iter()
            .map(|e| RankedCaption {
                caption: Caption {
                    concept_set_id: self.concept_set_id.clone(),
                    source_rank: e.source_rank,
                    text: e.text,
                },
                coverage: e.coverage,
            })
            .collect();
        let mut cs = CaptionSet::new(
            self.concept_set_id,
            concepts,
            ranked.iter().map(|r| r.caption.clone()).collect(),
        );
        cs.ranked = ranked;
        cs
    }
}
