//! Image retrieval: query construction, URL scraping, extension filtering
//! and content validation.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::ConceptSet;
use crate::http::{self, HttpFailure};
use crate::RetryPolicy;

/// URL extensions accepted for download.
pub const IMAGE_EXTENSIONS: [&str; 4] = [".png", ".jpeg", ".jpg", ".gif"];

pub const DEFAULT_URL_LIMIT: usize = 30;
pub const DEFAULT_MAX_IMAGE_BYTES: u64 = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageQuery {
    pub concept_set_id: String,
    pub query_text: String,
}

/// Joins the concepts, in stored order, with `+`.
pub fn build_query(cs: &ConceptSet) -> ImageQuery {
    ImageQuery {
        concept_set_id: cs.id().to_string(),
        query_text: cs.concepts().join("+"),
    }
}

/// One row of the retrieval manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedImage {
    pub concept_set_id: String,
    pub url: String,
    /// 1-based position in the engine's result list.
    pub rank: u32,
    pub validated: bool,
    pub local_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedUrl {
    pub rank: u32,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("search failed: {0}")]
    Network(HttpFailure),
    #[error("no search fixture for concept set {concept_set_id} (query {query_text})")]
    FixtureMiss {
        concept_set_id: String,
        query_text: String,
    },
    #[error("reading search fixture: {0}")]
    Fixture(String),
}

/// Source of ranked image URLs for a query.
pub trait SearchBackend: Sync {
    /// URLs in engine rank order. May return more than the caller needs.
    fn search(&self, query: &ImageQuery) -> Result<Vec<String>, SearchError>;
}

/// Offline backend: `<dir>/<query_text>.txt` holds one URL per line in
/// rank order.
#[derive(Debug, Clone)]
pub struct FixtureSearch {
    dir: PathBuf,
}

impl FixtureSearch {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureSearch { dir: dir.into() }
    }
}

impl SearchBackend for FixtureSearch {
    fn search(&self, query: &ImageQuery) -> Result<Vec<String>, SearchError> {
        let path = self.dir.join(format!("{}.txt", query.query_text));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SearchError::FixtureMiss {
                    concept_set_id: query.concept_set_id.clone(),
                    query_text: query.query_text.clone(),
                })
            }
            Err(e) => return Err(SearchError::Fixture(format!("{}: {e}", path.display()))),
        };
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }
}

/// Generic scraping backend: fetches a results page and pulls absolute
/// URLs out of it in document order.
///
/// The template must contain `{query}`, which is replaced by the
/// plus-joined query text.
#[derive(Debug, Clone)]
pub struct HttpSearch {
    template: String,
    agent: ureq::Agent,
    url_pattern: Regex,
}

impl HttpSearch {
    pub fn new(template: impl Into<String>, timeout: Duration) -> Self {
        HttpSearch {
            template: template.into(),
            agent: http::agent(timeout),
            url_pattern: Regex::new(r#"https?://[^\s"'<>\\)]+"#).expect("static regex"),
        }
    }

    fn page_url(&self, query: &ImageQuery) -> String {
        self.template.replace("{query}", &query.query_text)
    }

    /// Extracts candidate URLs from a results page, deduplicated, skipping
    /// links back to the results host itself.
    pub fn extract_urls(&self, page: &str) -> Vec<String> {
        let own_host = host_of(&self.template);
        let mut seen = std::collections::HashSet::new();
        let unescaped = page.replace("\\u003d", "=").replace("\\u0026", "&").replace("&amp;", "&");
        self.url_pattern
            .find_iter(&unescaped)
            .map(|m| m.as_str().to_string())
            .filter(|u| own_host.is_none() || host_of(u) != own_host)
            .filter(|u| seen.insert(u.clone()))
            .collect()
    }
}

fn host_of(url: &str) -> Option<&str> {
    let rest = url.split_once("://")?.1;
    rest.split(['/', '?', '#']).next()
}

impl SearchBackend for HttpSearch {
    fn search(&self, query: &ImageQuery) -> Result<Vec<String>, SearchError> {
        let page = self
            .agent
            .get(&self.page_url(query))
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| SearchError::Network(e.into()))?;
        Ok(self.extract_urls(&page))
    }
}

/// Result of [`fetch_urls`]. When the backend stayed unreachable after all
/// retries `urls` is empty and `gave_up` holds the last error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedUrls {
    pub urls: Vec<RankedUrl>,
    pub gave_up: Option<String>,
}

/// Top `limit` URLs for `query` in engine order, ranks starting at 1.
pub fn fetch_urls(
    query: &ImageQuery,
    limit: usize,
    backend: &dyn SearchBackend,
    retry: &RetryPolicy,
) -> Result<FetchedUrls, SearchError> {
    assert!(limit >= 1, "limit must be positive");
    let found = retry.run(
        |e: &SearchError| matches!(e, SearchError::Network(f) if f.is_transient()),
        || backend.search(query),
    );
    match found {
        Ok(urls) => Ok(FetchedUrls {
            urls: urls
                .into_iter()
                .take(limit)
                .zip(1..)
                .map(|(url, rank)| RankedUrl { rank, url })
                .collect(),
            gave_up: None,
        }),
        Err(SearchError::Network(f)) => {
            log::warn!("search for {} failed: {f}", query.concept_set_id);
            Ok(FetchedUrls {
                urls: Vec::new(),
                gave_up: Some(f.to_string()),
            })
        }
        Err(e) => Err(e),
    }
}

/// True iff the URL ends in one of [`IMAGE_EXTENSIONS`], ignoring case.
/// A query string or fragment after the extension disqualifies the URL.
pub fn has_image_extension(url: &str) -> bool {
    let lower = url.to_ascii_lowercase();
    IMAGE_EXTENSIONS.iter().any(|ext| lower.ends_with(ext))
}

/// Keeps URLs accepted by [`has_image_extension`], preserving order.
pub fn filter_by_extension<T: AsRef<str>>(urls: impl IntoIterator<Item = T>) -> Vec<T> {
    urls.into_iter().filter(|u| has_image_extension(u.as_ref())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Png,
    Jpeg,
    Gif,
}

impl ImageKind {
    pub fn extension(self) -> &'static str {
        match self {
            ImageKind::Png => "png",
            ImageKind::Jpeg => "jpg",
            ImageKind::Gif => "gif",
        }
    }

    fn sniff(bytes: &[u8]) -> Option<ImageKind> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(ImageKind::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(ImageKind::Jpeg)
        } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
            Some(ImageKind::Gif)
        } else {
            None
        }
    }

    fn format(self) -> image::ImageFormat {
        match self {
            ImageKind::Png => image::ImageFormat::Png,
            ImageKind::Jpeg => image::ImageFormat::Jpeg,
            ImageKind::Gif => image::ImageFormat::Gif,
        }
    }
}

/// Detects PNG, JPEG or GIF content whose header decodes to non-zero
/// dimensions.
pub fn detect_image(bytes: &[u8]) -> Option<ImageKind> {
    let kind = ImageKind::sniff(bytes)?;
    let reader = image::ImageReader::with_format(Cursor::new(bytes), kind.format());
    match reader.into_dimensions() {
        Ok((w, h)) if w > 0 && h > 0 => Some(kind),
        _ => None,
    }
}

pub fn validate_image(bytes: &[u8]) -> bool {
    detect_image(bytes).is_some()
}

/// Downloads image bytes for a URL.
pub trait ImageFetcher: Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure>;
}

#[derive(Debug, Clone)]
pub struct HttpFetcher {
    agent: ureq::Agent,
    max_bytes: u64,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, max_bytes: u64) -> Self {
        HttpFetcher {
            agent: http::agent(timeout),
            max_bytes,
        }
    }
}

impl ImageFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure> {
        let mut resp = self.agent.get(url).call()?;
        Ok(resp.body_mut().with_config().limit(self.max_bytes).read_to_vec()?)
    }
}

/// Offline fetcher: `scheme://host/path` is read from `<dir>/host/path`.
#[derive(Debug, Clone)]
pub struct FixtureFetcher {
    dir: PathBuf,
}

impl FixtureFetcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureFetcher { dir: dir.into() }
    }

    pub fn path_for(&self, url: &str) -> Option<PathBuf> {
        let rest = url.split_once("://")?.1;
        let mut path = self.dir.clone();
        for part in rest.split('/').filter(|p| !p.is_empty()) {
            if part == ".." || part == "." {
                return None;
            }
            path.push(part);
        }
        Some(path)
    }
}

impl ImageFetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure> {
        let path = self
            .path_for(url)
            .ok_or_else(|| HttpFailure::Permanent(format!("unsupported url {url}")))?;
        fs::read(&path).map_err(|e| HttpFailure::Permanent(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub limit: usize,
    pub retry: RetryPolicy,
    /// Where validated images are written, as `<dir>/<id>/<rank>.<ext>`.
    /// Nothing is stored when unset.
    pub images_dir: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            limit: DEFAULT_URL_LIMIT,
            retry: RetryPolicy::default(),
            images_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalFailure {
    pub concept_set_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetrievalReport {
    /// Sorted by `(concept_set_id, rank)`.
    pub images: Vec<RetrievedImage>,
    /// Concept sets that ended with no validated image, and why.
    pub failures: Vec<RetrievalFailure>,
}

/// Search, filter, download and validate for one concept set.
pub fn retrieve_one(
    cs: &ConceptSet,
    backend: &dyn SearchBackend,
    fetcher: &dyn ImageFetcher,
    config: &RetrievalConfig,
) -> (Vec<RetrievedImage>, Option<RetrievalFailure>) {
    let query = build_query(cs);
    let fail = |reason: String| {
        Some(RetrievalFailure {
            concept_set_id: cs.id().to_string(),
            reason,
        })
    };
    let fetched = match fetch_urls(&query, config.limit, backend, &config.retry) {
        Ok(f) => f,
        Err(e) => return (Vec::new(), fail(e.to_string())),
    };
    if let Some(reason) = fetched.gave_up {
        return (Vec::new(), fail(reason));
    }
    let candidates = fetched
        .urls
        .into_iter()
        .filter(|u| has_image_extension(&u.url));
    let mut images = Vec::new();
    let mut last_error = None;
    for candidate in candidates {
        let bytes = config
            .retry
            .run(HttpFailure::is_transient, || fetcher.fetch(&candidate.url));
        let mut image = RetrievedImage {
            concept_set_id: cs.id().to_string(),
            url: candidate.url,
            rank: candidate.rank,
            validated: false,
            local_path: None,
        };
        match bytes {
            Ok(bytes) => match detect_image(&bytes) {
                Some(kind) => {
                    image.validated = true;
                    if let Some(dir) = &config.images_dir {
                        match store_image(dir, cs.id(), candidate.rank, kind, &bytes) {
                            Ok(p) => image.local_path = Some(p.to_string_lossy().into_owned()),
                            Err(e) => {
                                log::warn!("storing {}: {e}", image.url);
                                image.validated = false;
                                last_error = Some(e.to_string());
                            }
                        }
                    }
                }
                None => last_error = Some(format!("{}: not a valid image", image.url)),
            },
            Err(e) => {
                log::warn!("download {} failed: {e}", image.url);
                last_error = Some(format!("{}: {e}", image.url));
            }
        }
        images.push(image);
    }
    let failure = if images.iter().any(|i| i.validated) {
        None
    } else {
        fail(last_error.unwrap_or_else(|| "no candidate image urls".to_string()))
    };
    (images, failure)
}

fn store_image(dir: &Path, id: &str, rank: u32, kind: ImageKind, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let set_dir = dir.join(id);
    fs::create_dir_all(&set_dir)?;
    let path = set_dir.join(format!("{rank}.{}", kind.extension()));
    fs::write(&path, bytes)?;
    Ok(path)
}

/// Runs [`retrieve_one`] for every concept set on the current rayon pool.
/// Output order does not depend on the pool size.
pub fn retrieve_all(
    sets: &[ConceptSet],
    backend: &dyn SearchBackend,
    fetcher: &dyn ImageFetcher,
    config: &RetrievalConfig,
) -> RetrievalReport {
    let results: Vec<_> = sets
        .par_iter()
        .map(|cs| retrieve_one(cs, backend, fetcher, config))
        .collect();
    let mut report = RetrievalReport::default();
    for (images, failure) in results {
        report.images.extend(images);
        report.failures.extend(failure);
    }
    report
        .images
        .sort_by(|a, b| (&a.concept_set_id, a.rank).cmp(&(&b.concept_set_id, b.rank)));
    report.failures.sort_by(|a, b| a.concept_set_id.cmp(&b.concept_set_id));
    report
}
