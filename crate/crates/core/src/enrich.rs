//! Per-domain metadata: category labels, host geolocation and
//! host-existence. Providers are pluggable so the test suite and offline
//! runs never touch an external service.

use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::profile::ResolverEndpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Source of category labels for a domain.
pub trait CategoryProvider: Send + Sync {
    fn categorize(&self, domain: &DomainName) -> Result<Vec<CategoryLabel>>;
}

/// CSV-backed lookup table: `domain,category;category`.
pub struct LocalCategoryTable {
    table: HashMap<DomainName, Vec<CategoryLabel>>,
}

impl LocalCategoryTable {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (domain, categories) = line.split_once(',').ok_or_else(|| {
                Error::CategoryProvider(format!("line {}: expected domain,categories", lineno + 1))
            })?;
            let domain = DomainName::parse(domain.trim())?;
            let labels: Vec<CategoryLabel> = categories
                .split(';')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(|name| CategoryLabel { name: name.to_string(), confidence: None })
                .collect();
            table.insert(domain, labels);
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

impl CategoryProvider for LocalCategoryTable {
    fn categorize(&self, domain: &DomainName) -> Result<Vec<CategoryLabel>> {
        Ok(self.table.get(domain).cloned().unwrap_or_default())
    }
}

/// Remote category API: `GET {host}/categories/{domain}` returning
/// `{"categories":[{"name":...,"confidence":...}]}`. The API key, when
/// set, travels in the `X-Api-Key` header.
pub struct HttpCategoryProvider {
    pub address: Ipv4Addr,
    pub port: u16,
    pub host: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl CategoryProvider for HttpCategoryProvider {
    fn categorize(&self, domain: &DomainName) -> Result<Vec<CategoryLabel>> {
        use std::io::{Read, Write};
        let addr = std::net::SocketAddrV4::new(self.address, self.port);
        let mut stream = std::net::TcpStream::connect_timeout(&addr.into(), self.timeout)
            .map_err(|e| Error::CategoryProvider(format!("connect: {e}")))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        let key_header = self
            .api_key
            .as_ref()
            .map(|k| format!("X-Api-Key: {k}\r\n"))
            .unwrap_or_default();
        let request = format!(
            "GET /categories/{domain} HTTP/1.1\r\nHost: {}\r\n{key_header}Accept: application/json\r\nConnection: close\r\n\r\n",
            self.host
        );
        stream.write_all(request.as_bytes()).map_err(|e| Error::CategoryProvider(e.to_string()))?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(|e| Error::CategoryProvider(e.to_string()))?;
        let body_start = raw
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| Error::CategoryProvider("malformed response".into()))?;
        #[derive(Deserialize)]
        struct Payload {
            categories: Vec<CategoryLabel>,
        }
        let payload: Payload = serde_json::from_slice(&raw[body_start + 4..])
            .map_err(|e| Error::CategoryProvider(format!("bad payload: {e}")))?;
        Ok(payload.categories)
    }
}

/// Caching front for a provider: one underlying call per domain per run,
/// failures degrade to an empty label list and are collected as warnings.
pub struct CategoryCache<'a> {
    provider: &'a dyn CategoryProvider,
    cache: Mutex<HashMap<DomainName, Vec<CategoryLabel>>>,
    warnings: Mutex<Vec<String>>,
}

impl<'a> CategoryCache<'a> {
    pub fn new(provider: &'a dyn CategoryProvider) -> Self {
        Self { provider, cache: Mutex::new(HashMap::new()), warnings: Mutex::new(Vec::new()) }
    }

    pub fn categories(&self, domain: &DomainName) -> Vec<CategoryLabel> {
        if let Some(hit) = self.cache.lock().unwrap().get(domain) {
            return hit.clone();
        }
        let labels = match self.provider.categorize(domain) {
            Ok(labels) => labels,
            Err(e) => {
                self.warnings.lock().unwrap().push(format!("categorize {domain}: {e}"));
                Vec::new()
            }
        };
        self.cache.lock().unwrap().insert(domain.clone(), labels.clone());
        labels
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRecord {
    pub address: Ipv4Addr,
    /// ISO country code, or None when no range covers the address.
    pub country: Option<String>,
}

/// Country database over IPv4 ranges. The plain-text form is a CSV of
/// `start_ip,end_ip,country`; files ending in `.mmdb` are read with the
/// standard binary country-database format.
pub enum GeoDb {
    Ranges(Vec<(u32, u32, String)>),
    Binary(maxminddb::Reader<Vec<u8>>),
}

impl GeoDb {
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().map(|e| e == "mmdb").unwrap_or(false) {
            let reader = maxminddb::Reader::open_readfile(path)
                .map_err(|e| Error::GeoDb { path: path.to_path_buf(), reason: e.to_string() })?;
            return Ok(GeoDb::Binary(reader));
        }
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::GeoDb {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut ranges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::GeoDb {
                    path: "<csv>".into(),
                    reason: format!("line {}: expected start_ip,end_ip,country", lineno + 1),
                });
            }
            let start: Ipv4Addr = fields[0].parse().map_err(|e| Error::GeoDb {
                path: "<csv>".into(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            let end: Ipv4Addr = fields[1].parse().map_err(|e| Error::GeoDb {
                path: "<csv>".into(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            if u32::from(start) > u32::from(end) {
                return Err(Error::GeoDb {
                    path: "<csv>".into(),
                    reason: format!("line {}: start above end", lineno + 1),
                });
            }
            ranges.push((u32::from(start), u32::from(end), fields[2].to_uppercase()));
        }
        if ranges.is_empty() {
            return Err(Error::GeoDb { path: "<csv>".into(), reason: "no ranges".into() });
        }
        ranges.sort();
        Ok(GeoDb::Ranges(ranges))
    }

    /// Country of the most specific (smallest) range containing `address`.
    pub fn lookup(&self, address: Ipv4Addr) -> GeoRecord {
        match self {
            GeoDb::Ranges(ranges) => {
                let ip = u32::from(address);
                let country = ranges
                    .iter()
                    .filter(|(start, end, _)| *start <= ip && ip <= *end)
                    .min_by_key(|(start, end, _)| end - start)
                    .map(|(_, _, c)| c.clone());
                GeoRecord { address, country }
            }
            GeoDb::Binary(reader) => {
                let country = reader
                    .lookup(std::net::IpAddr::V4(address))
                    .ok()
                    .and_then(|result| {
                        result.decode_path::<String>(&maxminddb::path!["country", "iso_code"]).ok()
                    })
                    .flatten();
                GeoRecord { address, country }
            }
        }
    }
}

/// True when the control resolver still has genuine records for `domain`.
pub fn host_exists(
    network: &dyn Network,
    domain: &DomainName,
    control: &ResolverEndpoint,
    timeout: Duration,
) -> bool {
    network.resolve(domain, control, timeout).is_answered()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    #[test]
    fn local_table_lookup_and_miss() {
        let table = LocalCategoryTable::from_csv("f1.test,adult\nf2.test,news and media;shopping\n").unwrap();
        assert_eq!(table.categorize(&name("f1.test")).unwrap()[0].name, "adult");
        assert_eq!(table.categorize(&name("f2.test")).unwrap().len(), 2);
        assert!(table.categorize(&name("unknown.test")).unwrap().is_empty());
    }

    #[test]
    fn cache_calls_provider_once_and_degrades() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Flaky {
            calls: AtomicUsize,
        }
        impl CategoryProvider for Flaky {
            fn categorize(&self, domain: &DomainName) -> Result<Vec<CategoryLabel>> {
                self.calls.fetch_add(1, Ordering::SeqCst);
                if domain.as_str().starts_with("bad") {
                    return Err(Error::CategoryProvider("timeout".into()));
                }
                Ok(vec![CategoryLabel { name: "news".into(), confidence: Some(0.9) }])
            }
        }
        let flaky = Flaky { calls: AtomicUsize::new(0) };
        let cache = CategoryCache::new(&flaky);
        assert_eq!(cache.categories(&name("ok.test")).len(), 1);
        assert_eq!(cache.categories(&name("ok.test")).len(), 1);
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
        // Failures become empty lists plus a warning, and are cached too.
        assert!(cache.categories(&name("bad.test")).is_empty());
        assert!(cache.categories(&name("bad.test")).is_empty());
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
        assert_eq!(cache.warnings().len(), 1);
    }

    #[test]
    fn http_provider_against_fixture_server() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 2048];
                let n = stream.read(&mut buf).unwrap();
                let req = String::from_utf8_lossy(&buf[..n]).to_string();
                assert!(req.starts_with("GET /categories/f1.test "), "{req}");
                assert!(req.contains("X-Api-Key: sekrit"));
                let body = r#"{"categories":[{"name":"proxy and filter avoidance","confidence":0.8}]}"#;
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        let provider = HttpCategoryProvider {
            address: "127.0.0.1".parse().unwrap(),
            port: addr.port(),
            host: "categories.internal".into(),
            api_key: Some("sekrit".into()),
            timeout: Duration::from_secs(2),
        };
        let labels = provider.categorize(&name("f1.test")).unwrap();
        assert_eq!(labels[0].name, "proxy and filter avoidance");
        assert_eq!(labels[0].confidence, Some(0.8));
    }

    #[test]
    fn geo_ranges_most_specific_wins() {
        let db = GeoDb::from_csv(
            "# fixture\n198.51.100.0,198.51.100.255,IE\n198.51.100.64,198.51.100.127,NL\n192.0.2.0,192.0.2.255,US\n",
        )
        .unwrap();
        assert_eq!(db.lookup("198.51.100.7".parse().unwrap()).country.as_deref(), Some("IE"));
        // Inside the narrower nested range.
        assert_eq!(db.lookup("198.51.100.100".parse().unwrap()).country.as_deref(), Some("NL"));
        assert_eq!(db.lookup("203.0.113.1".parse().unwrap()).country, None);
        assert_eq!(db.lookup("127.0.0.1".parse().unwrap()).country, None);
    }

    #[test]
    fn geo_csv_errors() {
        assert!(GeoDb::from_csv("").is_err());
        assert!(GeoDb::from_csv("1.2.3.4,1.2.3.0,US\n").is_err());
        assert!(GeoDb::from_csv("not-an-ip,1.2.3.4,US\n").is_err());
    }
}
