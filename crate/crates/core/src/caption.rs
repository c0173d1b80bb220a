//! Captions for retrieved images, obtained from an external captioner.
//!
//! The captioning model itself runs elsewhere. A provider is either a
//! precomputed caption manifest or a remote endpoint that answers
//! `{"image": <path or url>}` with `{"caption": <text>}`.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::http::{self, HttpFailure};
use crate::jsonl::{self, JsonlError};
use crate::retrieval::RetrievedImage;
use crate::RetryPolicy;

/// Environment variable naming the remote caption endpoint.
pub const ENDPOINT_ENV: &str = "CONCEPTGEN_CAPTION_ENDPOINT";

/// One caption manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub concept_set_id: String,
    /// Search rank of the captioned image.
    pub source_rank: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaptionError {
    #[error("provider unavailable: {0}")]
    Provider(HttpFailure),
    #[error("provider returned an empty caption")]
    Empty,
    #[error("no caption for this image")]
    Missing,
}

impl CaptionError {
    fn is_transient(&self) -> bool {
        matches!(self, CaptionError::Provider(f) if f.is_transient())
    }
}

pub trait CaptionProvider: Sync {
    fn caption(&self, image: &RetrievedImage) -> Result<String, CaptionError>;
}

/// Looks captions up by `(concept_set_id, rank)` in a precomputed manifest.
#[derive(Debug, Clone, Default)]
pub struct ManifestProvider {
    by_image: HashMap<(String, u32), String>,
}

impl ManifestProvider {
    pub fn new(captions: impl IntoIterator<Item = Caption>) -> Self {
        ManifestProvider {
            by_image: captions
                .into_iter()
                .map(|c| ((c.concept_set_id, c.source_rank), c.text))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self::new(jsonl::read::<Caption>(path)?))
    }
}

impl CaptionProvider for ManifestProvider {
    fn caption(&self, image: &RetrievedImage) -> Result<String, CaptionError> {
        self.by_image
            .get(&(image.concept_set_id.clone(), image.rank))
            .cloned()
            .ok_or(CaptionError::Missing)
    }
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    image: &'a str,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

/// Remote captioner reached over HTTP POST with a JSON body.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            agent: http::agent(timeout),
        }
    }
}

impl CaptionProvider for HttpProvider {
    fn caption(&self, image: &RetrievedImage) -> Result<String, CaptionError> {
        let reference = image.local_path.as_deref().unwrap_or(&image.url);
        let resp: CaptionResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(CaptionRequest { image: reference })
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| CaptionError::Provider(e.into()))?;
        Ok(resp.caption)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub concept_set_id: String,
    pub source_rank: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptionReport {
    /// Sorted by `(concept_set_id, source_rank)`.
    pub captions: Vec<Caption>,
    pub failures: Vec<CaptionFailure>,
}

/// Captions every validated image. Images the provider cannot answer for
/// are recorded in `failures` and skipped.
pub fn caption_images(
    images: &[RetrievedImage],
    provider: &dyn CaptionProvider,
    retry: &RetryPolicy,
) -> CaptionReport {
    let results: Vec<Result<Caption, CaptionFailure>> = images
        .par_iter()
        .filter(|img| img.validated)
        .map(|img| {
            let text = retry
                .run(CaptionError::is_transient, || provider.caption(img))
                .and_then(|t| {
                    if t.trim().is_empty() {
                        Err(CaptionError::Empty)
                    } else {
                        Ok(t)
                    }
                });
            match text {
                Ok(text) => Ok(Caption {
                    concept_set_id: img.concept_set_id.clone(),
                    source_rank: img.rank,
                    text,
                }),
                Err(e) => {
                    log::warn!("caption for {} rank {}: {e}", img.concept_set_id, img.rank);
                    Err(CaptionFailure {
                        concept_set_id: img.concept_set_id.clone(),
                        source_rank: img.rank,
                        reason: e.to_string(),
                    })
                }
            }
        })
        .collect();
    let mut report = CaptionReport::default();
    for r in results {
        match r {
            Ok(c) => report.captions.push(c),
            Err(f) => report.failures.push(f),
        }
    }
    report
        .captions
        .sort_by(|a, b| (&a.concept_set_id, a.source_rank).cmp(&(&b.concept_set_id, b.source_rank)));
    report
        .failures
        .sort_by(|a, b| (&a.concept_set_id, a.source_rank).cmp(&(&b.concept_set_id, b.source_rank)));
    report
}
