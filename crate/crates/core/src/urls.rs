//! URL normalization and the link-filtering predicates the crawler
//! applies to extracted hyperlinks.

use std::collections::HashSet;

use url::Url;

use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::psl::{registrable_domain, SuffixRuleSet};

/// Extensions treated as static assets and never crawled.
pub const DEFAULT_ASSET_EXTENSIONS: &[&str] = &[
    "js", "css", "png", "jpg", "jpeg", "gif", "svg", "ico", "woff", "woff2", "ttf", "mp4", "webm",
    "pdf", "zip",
];

/// Canonicalize `raw` into a crawlable URL, resolving relative references
/// against `base`. Only http/https URLs with domain-name hosts survive;
/// fragments are dropped, hosts lowercased and punycoded, default ports
/// elided and dot-segments resolved.
pub fn normalize_url(raw: &str, base: Option<&Url>) -> Result<Url> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(invalid(raw, "empty"));
    }
    let mut url = match Url::parse(trimmed) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => match base {
            Some(b) => b.join(trimmed).map_err(|e| invalid(raw, &e.to_string()))?,
            None => return Err(invalid(raw, "relative reference without a base")),
        },
        Err(e) => return Err(invalid(raw, &e.to_string())),
    };
    match url.scheme() {
        "http" | "https" => {}
        other => return Err(invalid(raw, &format!("unsupported scheme {other:?}"))),
    }
    match url.host() {
        Some(url::Host::Domain(_)) => {}
        Some(_) => return Err(invalid(raw, "host is an IP literal")),
        None => return Err(invalid(raw, "no host")),
    }
    url.set_fragment(None);
    // The parser already lowercases hosts, elides default ports, resolves
    // dot segments and serializes an empty path as "/".
    Ok(url)
}

/// The host of `url` as a [`DomainName`].
pub fn url_domain(url: &Url) -> Result<DomainName> {
    match url.host() {
        Some(url::Host::Domain(host)) => DomainName::parse(host),
        _ => Err(invalid(url.as_str(), "no domain host")),
    }
}

fn invalid(input: &str, reason: &str) -> Error {
    Error::InvalidUrl { input: input.to_string(), reason: reason.to_string() }
}

/// True when the path's final extension marks a static asset.
pub fn is_static_asset(url: &Url, asset_extensions: &HashSet<String>) -> bool {
    let path = url.path();
    let last_segment = path.rsplit('/').next().unwrap_or("");
    match last_segment.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => asset_extensions.contains(&ext.to_ascii_lowercase()),
        _ => false,
    }
}

/// True when `url` points back at the site being crawled: both sides
/// reduce to the same registrable domain. Hosts that are themselves bare
/// public suffixes fall back to exact-host comparison.
pub fn is_self_reference(url: &Url, page_domain: &DomainName, rules: &SuffixRuleSet) -> bool {
    let Ok(link_domain) = url_domain(url) else {
        return false;
    };
    match (registrable_domain(&link_domain, rules), registrable_domain(page_domain, rules)) {
        (Some(a), Some(b)) => a == b,
        _ => link_domain == *page_domain,
    }
}

pub fn default_asset_extensions() -> HashSet<String> {
    DEFAULT_ASSET_EXTENSIONS.iter().map(|s| s.to_string()).collect()
}
