//! Caption-grounded concept-to-text generation pipeline.
//!
//! Stages, each exchanging line-delimited JSON records:
//!
//! * [`dataset`]: load concept sets with references and re-split the
//!   original dev partition.
//! * [`retrieval`]: image search queries, URL scraping, extension
//!   filtering and content validation.
//! * [`caption`]: one caption per retrieved image from an external
//!   captioner.
//! * [`ranker`]: reorder captions by concept coverage and pick the top NTC
//!   (number of top captions).
//! * [`augment`]: build `<s>`-separated model inputs and emit source/target
//!   files.
//! * [`metrics`]: coverage, BLEU, ROUGE and CIDEr.
//! * [`sigtest`]: paired permutation and approximate randomization tests.
//! * [`sweep`]: coverage-vs-NTC curves and NTC selection.

pub mod augment;
pub mod caption;
pub mod dataset;
pub mod jsonl;
mod http;
pub mod metrics;
mod porter;
pub mod ranker;
pub mod retrieval;
mod retry;
pub mod sigtest;
pub mod sweep;
pub mod textnorm;

pub use porter::stem;
pub use http::{HttpFailure, DEFAULT_HTTP_TIMEOUT};
pub use retry::RetryPolicy;
