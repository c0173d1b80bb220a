//! Concept sets, references and split handling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

pub const MIN_CONCEPTS: usize = 3;
pub const MAX_CONCEPTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    DevO,
    TestO,
    DevCg,
    TestCg,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::DevO => "dev_o",
            Split::TestO => "test_o",
            Split::DevCg => "dev_cg",
            Split::TestCg => "test_cg",
        }
    }

    /// Training splits expand to one example per reference; the others are
    /// decoded once per concept set.
    pub fn is_training(self) -> bool {
        self == Split::Train
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev_o" => Ok(Split::DevO),
            "test_o" => Ok(Split::TestO),
            "dev_cg" => Ok(Split::DevCg),
            "test_cg" => Ok(Split::TestCg),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("concept set {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("concept set {id} has split {split}, expected dev_o")]
    NotDevO { id: String, split: Split },
    #[error("stratum size={size}: need {needed} records, have {available}")]
    InsufficientStratum {
        size: usize,
        needed: usize,
        available: usize,
    },
}

/// An ordered set of 3 to 5 distinct lowercase keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    id: String,
    concepts: Vec<String>,
    split: Split,
}

impl ConceptSet {
    pub fn new(id: impl Into<String>, concepts: Vec<String>, split: Split) -> Result<Self, DatasetError> {
        let id = id.into();
        let invalid = |reason: &str| DatasetError::Invalid {
            id: id.clone(),
            reason: reason.to_string(),
        };
        if !(MIN_CONCEPTS..=MAX_CONCEPTS).contains(&concepts.len()) {
            return Err(invalid("size out of range"));
        }
        let mut seen = HashSet::new();
        for c in &concepts {
            if c.is_empty() {
                return Err(invalid("empty concept"));
            }
            if c.chars().any(char::is_whitespace) {
                return Err(invalid("concept is not a single keyword"));
            }
            if c.to_lowercase() != *c {
                return Err(invalid("concept not lowercase"));
            }
            if !seen.insert(c.as_str()) {
                return Err(invalid("duplicate concept"));
            }
        }
        Ok(ConceptSet { id, concepts, split })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    concept_set_id: String,
    references: Vec<String>,
}

impl ReferenceSet {
    pub fn new(concept_set_id: impl Into<String>, references: Vec<String>) -> Result<Self, DatasetError> {
        let concept_set_id = concept_set_id.into();
        if references.is_empty() || references.iter().any(|r| r.trim().is_empty()) {
            return Err(DatasetError::Invalid {
                id: concept_set_id,
                reason: "empty reference".to_string(),
            });
        }
        Ok(ReferenceSet {
            concept_set_id,
            references,
        })
    }

    pub fn concept_set_id(&self) -> &str {
        &self.concept_set_id
    }

    pub fn references(&self) -> &[String] {
        &self.references
    }
}

/// A concept set with its human references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub concept_set: ConceptSet,
    pub references: ReferenceSet,
}

impl Record {
    pub fn id(&self) -> &str {
        self.concept_set.id()
    }
}

/// On-disk shape of one dataset line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub concepts: Vec<String>,
    pub references: Vec<String>,
    pub split: Split,
}

impl TryFrom<RawRecord> for Record {
    type Error = DatasetError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let concept_set = ConceptSet::new(raw.id.clone(), raw.concepts, raw.split)?;
        let references = ReferenceSet::new(raw.id, raw.references)?;
        Ok(Record {
            concept_set,
            references,
        })
    }
}

impl From<&Record> for RawRecord {
    fn from(r: &Record) -> Self {
        RawRecord {
            id: r.id().to_string(),
            concepts: r.concept_set.concepts.clone(),
            references: r.references.references.clone(),
            split: r.concept_set.split,
        }
    }
}

/// Loads and validates a dataset file. Ids must be unique.
pub fn load_dataset(path: &Path) -> Result<Vec<Record>, DatasetError> {
    let raw: Vec<RawRecord> = jsonl::read(path)?;
    validate_records(raw)
}

pub fn validate_records(raw: Vec<RawRecord>) -> Result<Vec<Record>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(DatasetError::DuplicateId(r.id));
        }
        out.push(Record::try_from(r)?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[Record]) -> Result<(), DatasetError> {
    let raw: Vec<RawRecord> = records.iter().map(RawRecord::from).collect();
    jsonl::write(path, &raw)?;
    Ok(())
}

/// Per-size concept-set counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub total: usize,
    pub by_size: BTreeMap<usize, usize>,
}

impl SplitStats {
    pub fn count(&self, size: usize) -> usize {
        self.by_size.get(&size).copied().unwrap_or(0)
    }
}

pub fn split_stats(records: &[Record]) -> SplitStats {
    let mut stats = SplitStats::default();
    for r in records {
        stats.total += 1;
        *stats.by_size.entry(r.concept_set.len()).or_default() += 1;
    }
    stats
}

/// How many dev_o concept sets of one size go to each new split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratumQuota {
    pub size: usize,
    pub dev: usize,
    pub test: usize,
}

/// dev_cg takes 120/60/60 sets of size 3/4/5; test_cg takes 180/180 of
/// sizes 4/5 and no size-3 sets.
pub const RESPLIT_QUOTAS: [StratumQuota; 3] = [
    StratumQuota { size: 3, dev: 120, test: 0 },
    StratumQuota { size: 4, dev: 60, test: 180 },
    StratumQuota { size: 5, dev: 60, test: 180 },
];

pub const DEFAULT_RESPLIT_SEED: u64 = 42;

/// Partitions dev_o into dev_cg and test_cg by stratified uniform sampling
/// within each concept-set size. Output preserves input order.
pub fn resplit_dev(records: &[Record], seed: u64) -> Result<(Vec<Record>, Vec<Record>), DatasetError> {
    resplit_with_quotas(records, seed, &RESPLIT_QUOTAS)
}

pub fn resplit_with_quotas(
    records: &[Record],
    seed: u64,
    quotas: &[StratumQuota],
) -> Result<(Vec<Record>, Vec<Record>), DatasetError> {
    if let Some(r) = records.iter().find(|r| r.concept_set.split != Split::DevO) {
        return Err(DatasetError::NotDevO {
            id: r.id().to_string(),
            split: r.concept_set.split,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Option<Split>> = vec![None; records.len()];
    for quota in quotas {
        let mut stratum: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].concept_set.len() == quota.size)
            .collect();
        let needed = quota.dev + quota.test;
        if stratum.len() < needed {
            return Err(DatasetError::InsufficientStratum {
                size: quota.size,
                needed,
                available: stratum.len(),
            });
        }
        stratum.shuffle(&mut rng);
        for &i in &stratum[..quota.dev] {
            assignment[i] = Some(Split::DevCg);
        }
        for &i in &stratum[quota.dev..needed] {
            assignment[i] = Some(Split::TestCg);
        }
    }
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for (record, split) in records.iter().zip(assignment) {
        let target = match split {
            Some(Split::DevCg) => &mut dev,
            Some(_) => &mut test,
            None => continue,
        };
        let mut r = record.clone();
        r.concept_set = r.concept_set.with_split(split.unwrap());
        target.push(r);
    }
    Ok((dev, test))
}
