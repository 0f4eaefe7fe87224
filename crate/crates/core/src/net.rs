//! Network access abstraction shared by the filtering checks and the
//! crawler. Production code talks to the real internet through
//! [`LiveNetwork`]; tests and offline runs use the simulated network.

use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::dns::client as dns_client;
use crate::domain::DomainName;
use crate::http;
use crate::profile::ResolverEndpoint;

/// Cap on bytes read from a single check fetch.
pub const MAX_CHECK_BODY: u64 = 5 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnsOutcomeKind {
    Answered,
    Nxdomain,
    Timeout,
    Error,
}

/// Result of one DNS resolution attempt. All failure shapes are encoded
/// here rather than surfaced as errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsOutcome {
    pub kind: DnsOutcomeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub addresses: Vec<Ipv4Addr>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl DnsOutcome {
    pub fn answered(addresses: Vec<Ipv4Addr>, latency_ms: u64) -> Self {
        debug_assert!(!addresses.is_empty());
        Self { kind: DnsOutcomeKind::Answered, addresses, latency_ms, detail: None }
    }

    pub fn nxdomain(latency_ms: u64) -> Self {
        Self { kind: DnsOutcomeKind::Nxdomain, addresses: Vec::new(), latency_ms, detail: None }
    }

    pub fn timeout(latency_ms: u64) -> Self {
        Self { kind: DnsOutcomeKind::Timeout, addresses: Vec::new(), latency_ms, detail: None }
    }

    pub fn error(detail: impl Into<String>, latency_ms: u64) -> Self {
        Self {
            kind: DnsOutcomeKind::Error,
            addresses: Vec::new(),
            latency_ms,
            detail: Some(detail.into()),
        }
    }

    pub fn is_answered(&self) -> bool {
        self.kind == DnsOutcomeKind::Answered
    }

    pub fn first_address(&self) -> Option<Ipv4Addr> {
        self.addresses.first().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchOutcomeKind {
    Content,
    Timeout,
    Error,
}

/// Result of one check-style HTTP GET. Any HTTP response counts as
/// content, whatever its status code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub kind: FetchOutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_code: Option<u16>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl FetchOutcome {
    pub fn content(status_code: u16, body: &[u8], latency_ms: u64) -> Self {
        use sha2::Digest;
        let digest = sha2::Sha256::digest(body);
        Self {
            kind: FetchOutcomeKind::Content,
            body_length: Some(body.len() as u64),
            body_digest: Some(hex_string(&digest)),
            status_code: Some(status_code),
            latency_ms,
            detail: None,
        }
    }

    pub fn timeout(latency_ms: u64) -> Self {
        Self {
            kind: FetchOutcomeKind::Timeout,
            body_length: None,
            body_digest: None,
            status_code: None,
            latency_ms,
            detail: None,
        }
    }

    pub fn error(detail: impl Into<String>, latency_ms: u64) -> Self {
        Self {
            kind: FetchOutcomeKind::Error,
            body_length: None,
            body_digest: None,
            status_code: None,
            latency_ms,
            detail: Some(detail.into()),
        }
    }

    pub fn is_content(&self) -> bool {
        self.kind == FetchOutcomeKind::Content
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A fetched crawl page: body retained, same-host redirects already
/// followed. A cross-host redirect ends the chain; its target is surfaced
/// in `location` so the caller can treat it as an outbound link.
#[derive(Debug, Clone)]
pub struct PageFetch {
    pub final_url: Url,
    pub status: u16,
    pub body: Vec<u8>,
    pub location: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PageFetchError {
    #[error("timed out")]
    Timeout,
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("too many redirects")]
    TooManyRedirects,
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// How the crawler and checker reach resolvers and web servers.
///
/// Implementations must be safe for concurrent use; every method is a
/// single self-contained exchange.
pub trait Network: Send + Sync {
    /// Issue one A query to `endpoint` and wait up to `timeout`.
    fn resolve(&self, domain: &DomainName, endpoint: &ResolverEndpoint, timeout: Duration) -> DnsOutcome;

    /// Check-style fetch: one GET for "/" at `address:port` with the Host
    /// header set to `host`. Never follows redirects.
    fn fetch_check(&self, address: Ipv4Addr, port: u16, host: &DomainName, timeout: Duration) -> FetchOutcome;

    /// Crawl-style fetch of `url` with its host pinned to `address`.
    /// Follows same-host redirects up to `max_redirects`.
    fn fetch_page(
        &self,
        address: Ipv4Addr,
        url: &Url,
        timeout: Duration,
        max_body: u64,
        max_redirects: u32,
    ) -> Result<PageFetch, PageFetchError>;
}

/// Real sockets: UDP/TCP DNS on port 53 and HTTP/1.1 over TCP.
#[derive(Debug, Default, Clone)]
pub struct LiveNetwork;

impl LiveNetwork {
    pub fn new() -> Self {
        Self
    }
}

impl Network for LiveNetwork {
    fn resolve(&self, domain: &DomainName, endpoint: &ResolverEndpoint, timeout: Duration) -> DnsOutcome {
        dns_client::resolve_a(domain, std::net::SocketAddrV4::new(endpoint.address, endpoint.port), timeout)
    }

    fn fetch_check(&self, address: Ipv4Addr, port: u16, host: &DomainName, timeout: Duration) -> FetchOutcome {
        http::get_check(address, port, host, timeout, MAX_CHECK_BODY)
    }

    fn fetch_page(
        &self,
        address: Ipv4Addr,
        url: &Url,
        timeout: Duration,
        max_body: u64,
        max_redirects: u32,
    ) -> Result<PageFetch, PageFetchError> {
        let port = url.port_or_known_default().unwrap_or(80);
        http::get_page(address, port, url, timeout, max_body, max_redirects)
    }
}
