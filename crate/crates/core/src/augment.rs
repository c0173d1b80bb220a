//! Augmented model inputs: concepts followed by `<s>`-separated captions.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::jsonl::{self, JsonlError};
use crate::ranker::{select_top, CaptionSet, Ntc};

pub const SEPARATOR: &str = "<s>";

/// `c1 c2 ... ck <s> cap1 <s> cap2 ... <s> capN`. With no captions the
/// result is just the space-joined concepts.
pub fn build_input<C: AsRef<str>, S: AsRef<str>>(concepts: &[C], captions: &[S]) -> String {
    let mut out = concepts.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    for cap in captions {
        out.push(' ');
        out.push_str(SEPARATOR);
        out.push(' ');
        out.push_str(cap.as_ref());
    }
    out
}

/// Splits a source string on ` <s> ` into the concept prefix and the
/// captions.
pub fn parse_input(source: &str) -> (&str, Vec<&str>) {
    let delimiter = format!(" {SEPARATOR} ");
    let mut parts = source.split(delimiter.as_str());
    let prefix = parts.next().unwrap_or_default();
    (prefix, parts.collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub concept_set_id: String,
    pub ntc: Ntc,
    pub source_text: String,
    /// References in training mode, empty for inference.
    pub target_texts: Vec<String>,
}

/// One line of an emitted dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTarget {
    pub id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitMode {
    /// One line per (concept set, reference) pair.
    Train,
    /// One line per concept set, no target.
    Inference,
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// Builds the augmented input of every record. Records without a ranked
/// caption set get the zero-caption form; their ids are returned second.
pub fn augment_records(
    records: &[Record],
    caption_sets: &HashMap<String, CaptionSet>,
    ntc: Ntc,
    mode: EmitMode,
) -> (Vec<AugmentedInput>, Vec<String>) {
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let mut missing = Vec::new();
    let inputs = sorted
        .into_iter()
        .map(|r| {
            let concepts = r.concept_set.concepts();
            let source_text = match caption_sets.get(r.id()) {
                Some(cs) => {
                    let texts: Vec<&str> = select_top(cs, ntc).into_iter().map(|c| c.text.as_str()).collect();
                    build_input(concepts, &texts)
                }
                None => {
                    log::warn!("no captions for concept set {}; using concepts only", r.id());
                    missing.push(r.id().to_string());
                    build_input::<_, &str>(concepts, &[])
                }
            };
            let target_texts = match mode {
                EmitMode::Train => r.references.references().to_vec(),
                EmitMode::Inference => Vec::new(),
            };
            AugmentedInput {
                concept_set_id: r.id().to_string(),
                ntc,
                source_text,
                target_texts,
            }
        })
        .collect();
    (inputs, missing)
}

/// Expands augmented inputs into file lines.
pub fn to_lines(inputs: &[AugmentedInput], mode: EmitMode) -> Vec<SourceTarget> {
    let mut lines = Vec::new();
    for input in inputs {
        match mode {
            EmitMode::Train => lines.extend(input.target_texts.iter().map(|t| SourceTarget {
                id: input.concept_set_id.clone(),
                source: input.source_text.clone(),
                target: Some(t.clone()),
            })),
            EmitMode::Inference => lines.push(SourceTarget {
                id: input.concept_set_id.clone(),
                source: input.source_text.clone(),
                target: None,
            }),
        }
    }
    lines
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitSummary {
    pub lines: usize,
    pub missing_captions: Vec<String>,
}

/// Writes the source/target file for `records` at the given NTC, ordered
/// by concept-set id.
pub fn emit_dataset(
    records: &[Record],
    caption_sets: &HashMap<String, CaptionSet>,
    ntc: Ntc,
    mode: EmitMode,
    out_path: &Path,
) -> Result<EmitSummary, AugmentError> {
    let (inputs, missing_captions) = augment_records(records, caption_sets, ntc, mode);
    let lines = to_lines(&inputs, mode);
    jsonl::write(out_path, &lines)?;
    Ok(EmitSummary {
        lines: lines.len(),
        missing_captions,
    })
}
