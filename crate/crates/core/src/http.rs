//! Blocking HTTP helpers shared by the live search and caption adapters.

use std::time::Duration;

use ureq::Agent;

pub const DEFAULT_HTTP_TIMEOUT: Duration = Duration::from_secs(10);

pub(crate) fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .user_agent(concat!("conceptgen/", env!("CARGO_PKG_VERSION")))
        .build()
        .into()
}

/// Failure of one HTTP exchange, split by whether a retry can help.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HttpFailure {
    #[error("{0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
}

impl HttpFailure {
    pub fn is_transient(&self) -> bool {
        matches!(self, HttpFailure::Transient(_))
    }
}

impl From<ureq::Error> for HttpFailure {
    fn from(e: ureq::Error) -> Self {
        use ureq::Error as E;
        match e {
            E::StatusCode(code) if code == 429 || code >= 500 => {
                HttpFailure::Transient(format!("http status {code}"))
            }
            E::StatusCode(code) => HttpFailure::Permanent(format!("http status {code}")),
            E::Io(_) | E::Timeout(_) | E::HostNotFound | E::ConnectionFailed | E::BodyStalled => {
                HttpFailure::Transient(e.to_string())
            }
            other => HttpFailure::Permanent(other.to_string()),
        }
    }
}
