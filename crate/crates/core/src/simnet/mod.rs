//! Deterministic in-process simulated network: a world document scripts
//! every resolver's behavior per domain and every site's pages, and the
//! serving layer realizes it with real loopback sockets. Includes the
//! independent discovery oracle used to check the crawler.

mod generate;
mod oracle;
mod serve;

pub use generate::{generate_world, GeneratorConfig};
pub use oracle::{oracle_discover, OracleResult};
pub use serve::{serve, SimHandle, SimNetwork};

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::check::{FilterReason, FilterStatus};
use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::urls::normalize_url;

/// Fixed body served for unknown paths on a live site.
pub const NOT_FOUND_BODY: &str = "<html><body><h1>404 not found</h1></body></html>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub domains: Vec<WorldDomain>,
    /// Starting URLs for traversal.
    pub seeds: Vec<String>,
    /// Hosts that links may point at without being declared as domains.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external: Vec<DomainName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDomain {
    pub name: DomainName,
    /// Ground truth used by the oracle; the scripted behaviors must lead
    /// the checker to the same conclusion.
    pub filtered: bool,
    /// False: the control resolver has no records (NXDOMAIN).
    #[serde(default = "default_true")]
    pub exists: bool,
    /// True: the site's genuine address accepts no HTTP connections.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub http_dead: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pages: Vec<WorldPage>,
    #[serde(default)]
    pub resolver_behaviors: ResolverBehaviors,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldPage {
    pub path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<String>,
    pub body_length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolverBehaviors {
    #[serde(default)]
    pub measurement: MeasurementScript,
    #[serde(default)]
    pub fake: FakeScript,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementScript {
    /// Answer exactly like the control resolver.
    #[default]
    Honest,
    /// Never respond.
    Timeout,
    /// Lie with a name error.
    Nxdomain,
    /// Answer with a fixed (wrong) address.
    Poison { address: Ipv4Addr },
    /// Answer with the address of a block page of the given length.
    RedirectToBlockpage { length: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FakeScript {
    /// Drop every query, as a truly unallocated address would.
    #[default]
    Silent,
    /// In-path interception: answer with a fixed address.
    Intercept { address: Ipv4Addr },
}

impl WorldSpec {
    pub fn domain(&self, name: &DomainName) -> Option<&WorldDomain> {
        self.domains.iter().find(|d| &d.name == name)
    }

    pub fn page(&self, name: &DomainName, path: &str) -> Option<&WorldPage> {
        self.domain(name).and_then(|d| d.pages.iter().find(|p| p.path == path))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parse and validate a world document.
pub fn load_world(text: &str) -> Result<WorldSpec> {
    let world: WorldSpec = serde_json::from_str(text).map_err(|e| Error::World(e.to_string()))?;
    validate_world(&world)?;
    Ok(world)
}

pub fn validate_world(world: &WorldSpec) -> Result<()> {
    if world.domains.is_empty() {
        return Err(Error::World("no domains declared".into()));
    }
    let mut names = HashSet::new();
    for domain in &world.domains {
        if !names.insert(domain.name.clone()) {
            return Err(Error::World(format!("duplicate domain {}", domain.name)));
        }
    }
    let known: HashSet<&DomainName> =
        world.domains.iter().map(|d| &d.name).chain(world.external.iter()).collect();

    for domain in &world.domains {
        let mut paths = HashSet::new();
        for page in &domain.pages {
            if !page.path.starts_with('/') {
                return Err(Error::World(format!(
                    "{} page {:?}: paths must start with '/'",
                    domain.name, page.path
                )));
            }
            if !paths.insert(page.path.clone()) {
                return Err(Error::World(format!("{} declares page {:?} twice", domain.name, page.path)));
            }
            // The body must be able to hold its own links.
            let min = min_page_length(&page.links);
            if page.body_length < min {
                return Err(Error::World(format!(
                    "{} page {:?}: body_length {} cannot hold its links (minimum {min})",
                    domain.name, page.path, page.body_length
                )));
            }
            let base = normalize_url(&format!("http://{}{}", domain.name, page.path), None)
                .map_err(|e| Error::World(format!("{} page {:?}: {e}", domain.name, page.path)))?;
            for link in &page.links {
                let url = normalize_url(link, Some(&base)).map_err(|e| {
                    Error::World(format!("{} page {:?}: bad link {link:?}: {e}", domain.name, page.path))
                })?;
                let host = crate::urls::url_domain(&url).expect("normalized urls have domain hosts");
                if !known.contains(&host) {
                    return Err(Error::World(format!(
                        "{} page {:?}: link target {host} is neither declared nor external",
                        domain.name, page.path
                    )));
                }
            }
        }
        if let MeasurementScript::RedirectToBlockpage { length } = domain.resolver_behaviors.measurement {
            let min = min_blockpage_length();
            if length < min {
                return Err(Error::World(format!(
                    "{}: block page length {length} below minimum {min}",
                    domain.name
                )));
            }
        }
    }

    if world.seeds.is_empty() {
        return Err(Error::World("no seeds declared".into()));
    }
    for seed in &world.seeds {
        let url = normalize_url(seed, None).map_err(|e| Error::World(format!("bad seed {seed:?}: {e}")))?;
        let host = crate::urls::url_domain(&url).expect("normalized urls have domain hosts");
        if world.domain(&host).is_none() {
            return Err(Error::World(format!("seed {seed:?} points at undeclared domain {host}")));
        }
    }
    Ok(())
}

/// Render a page body of exactly `body_length` bytes carrying the given
/// anchors. Padding rides inside an HTML comment.
pub fn render_page(links: &[String], body_length: u64) -> Result<String> {
    let mut core = String::from("<html><head><title>page</title></head><body>\n");
    for (i, link) in links.iter().enumerate() {
        core.push_str(&format!("<a href=\"{link}\">link {i}</a>\n"));
    }
    core.push_str("<!----></body></html>");
    pad_to(core, body_length)
}

pub fn min_page_length(links: &[String]) -> u64 {
    let mut core = String::from("<html><head><title>page</title></head><body>\n");
    for (i, link) in links.iter().enumerate() {
        core.push_str(&format!("<a href=\"{link}\">link {i}</a>\n"));
    }
    core.push_str("<!----></body></html>");
    core.len() as u64
}

pub fn render_blockpage(body_length: u64) -> Result<String> {
    pad_to("<html><body>blocked<!----></body></html>".to_string(), body_length)
}

pub fn min_blockpage_length() -> u64 {
    "<html><body>blocked<!----></body></html>".len() as u64
}

fn pad_to(core: String, body_length: u64) -> Result<String> {
    let need = body_length as i64 - core.len() as i64;
    if need < 0 {
        return Err(Error::World(format!(
            "body_length {body_length} smaller than minimal page of {} bytes",
            core.len()
        )));
    }
    // Insert padding into the empty comment before the closing tags.
    let idx = core.rfind("<!---->").expect("core carries a padding comment");
    let mut out = String::with_capacity(body_length as usize);
    out.push_str(&core[..idx + 4]);
    for _ in 0..need {
        out.push('x');
    }
    out.push_str(&core[idx + 4..]);
    debug_assert_eq!(out.len() as u64, body_length);
    Ok(out)
}

/// What the checker must conclude for `domain` given its scripts, under
/// the default divergence rule with the given `maxdiff`. Used to assert
/// fixture coherence and by the generator's self-check.
pub fn expected_verdict(world: &WorldSpec, name: &DomainName, maxdiff: f64) -> (FilterStatus, FilterReason) {
    let Some(domain) = world.domain(name) else {
        // Undeclared: every resolver says NXDOMAIN -> both sides dead.
        return (FilterStatus::Indeterminate, FilterReason::None);
    };
    if let FakeScript::Intercept { .. } = domain.resolver_behaviors.fake {
        return (FilterStatus::Filtered, FilterReason::InterceptedFake);
    }
    let control_answers = domain.exists;
    let control_len: Option<u64> = if domain.http_dead {
        None
    } else {
        Some(
            domain
                .pages
                .iter()
                .find(|p| p.path == "/")
                .map(|p| p.body_length)
                .unwrap_or(NOT_FOUND_BODY.len() as u64),
        )
    };
    match &domain.resolver_behaviors.measurement {
        MeasurementScript::Honest => {
            if control_answers {
                (FilterStatus::NotFiltered, FilterReason::None)
            } else {
                (FilterStatus::Indeterminate, FilterReason::None)
            }
        }
        MeasurementScript::Timeout | MeasurementScript::Nxdomain => {
            if control_answers {
                (FilterStatus::Filtered, FilterReason::MeasurementTimeout)
            } else {
                (FilterStatus::Indeterminate, FilterReason::None)
            }
        }
        MeasurementScript::Poison { address } => {
            if !control_answers {
                // Control has no address: the private-IP check cannot fire,
                // and a poison target serves nothing, so both fetches die.
                return (FilterStatus::NotFiltered, FilterReason::None);
            }
            if crate::check::is_private_ip(*address) {
                return (FilterStatus::Filtered, FilterReason::PrivateIp);
            }
            // Poison targets are never mapped to a server in our worlds.
            match control_len {
                Some(_) => (FilterStatus::Filtered, FilterReason::MeasurementHttpDead),
                None => (FilterStatus::NotFiltered, FilterReason::None),
            }
        }
        MeasurementScript::RedirectToBlockpage { length } => {
            if !control_answers {
                return (FilterStatus::Filtered, FilterReason::ControlHttpDead);
            }
            match control_len {
                None => (FilterStatus::Filtered, FilterReason::ControlHttpDead),
                Some(c_len) => {
                    let divergence = crate::check::content_length_divergence(*length, c_len);
                    if divergence > maxdiff {
                        (FilterStatus::Filtered, FilterReason::ContentLengthMismatch)
                    } else {
                        (FilterStatus::NotFiltered, FilterReason::None)
                    }
                }
            }
        }
    }
}

/// Deterministic virtual addresses for sites and block pages, drawn from
/// the documentation/test ranges.
pub(crate) fn assign_addresses(world: &WorldSpec) -> (BTreeMap<DomainName, Ipv4Addr>, BTreeMap<DomainName, Ipv4Addr>) {
    let mut pool = AddressPool::new();
    let mut site = BTreeMap::new();
    let mut block = BTreeMap::new();
    for domain in &world.domains {
        if domain.exists {
            site.insert(domain.name.clone(), pool.next());
        }
        if matches!(domain.resolver_behaviors.measurement, MeasurementScript::RedirectToBlockpage { .. }) {
            block.insert(domain.name.clone(), pool.next());
        }
    }
    (site, block)
}

struct AddressPool {
    index: u32,
}

impl AddressPool {
    fn new() -> Self {
        Self { index: 0 }
    }

    fn next(&mut self) -> Ipv4Addr {
        let i = self.index;
        self.index += 1;
        // 192.0.2.0/24, then 198.51.100.0/24, then 203.0.113.0/24, then
        // the 198.18.0.0/15 benchmark range for very large worlds.
        match i {
            0..=253 => Ipv4Addr::new(192, 0, 2, (i + 1) as u8),
            254..=507 => Ipv4Addr::new(198, 51, 100, (i - 254 + 1) as u8),
            508..=761 => Ipv4Addr::new(203, 0, 113, (i - 508 + 1) as u8),
            _ => {
                let j = i - 762;
                Ipv4Addr::new(198, 18, ((j / 254) % 256) as u8, (j % 254 + 1) as u8)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_world() -> String {
        serde_json::json!({
            "domains": [
                {"name": "solo.test", "filtered": true, "exists": true,
                 "pages": [{"path": "/", "links": [], "body_length": 100}],
                 "resolver_behaviors": {"measurement": {"kind": "timeout"}}}
            ],
            "seeds": ["http://solo.test/"]
        })
        .to_string()
    }

    #[test]
    fn minimal_world_loads() {
        let world = load_world(&minimal_world()).unwrap();
        assert_eq!(world.domains.len(), 1);
        assert!(world.domains[0].exists);
        assert_eq!(world.domains[0].resolver_behaviors.fake, FakeScript::Silent);
    }

    #[test]
    fn dangling_link_is_an_error_naming_the_path() {
        let text = serde_json::json!({
            "domains": [
                {"name": "a.test", "filtered": true,
                 "pages": [{"path": "/", "links": ["http://missing.test/"], "body_length": 200}]}
            ],
            "seeds": ["http://a.test/"]
        })
        .to_string();
        let err = load_world(&text).unwrap_err().to_string();
        assert!(err.contains("missing.test"), "{err}");
        assert!(err.contains("\"/\""), "{err}");
    }

    #[test]
    fn external_targets_are_allowed() {
        let text = serde_json::json!({
            "domains": [
                {"name": "a.test", "filtered": true,
                 "pages": [{"path": "/", "links": ["http://offsite.example/"], "body_length": 200}]}
            ],
            "external": ["offsite.example"],
            "seeds": ["http://a.test/"]
        })
        .to_string();
        load_world(&text).unwrap();
    }

    #[test]
    fn undersized_bodies_and_dup_paths_rejected() {
        let text = serde_json::json!({
            "domains": [
                {"name": "a.test", "filtered": false,
                 "pages": [{"path": "/", "links": ["http://a.test/x", "http://a.test/y"], "body_length": 10}]}
            ],
            "seeds": ["http://a.test/"]
        })
        .to_string();
        assert!(load_world(&text).unwrap_err().to_string().contains("body_length"));

        let text = serde_json::json!({
            "domains": [
                {"name": "a.test", "filtered": false,
                 "pages": [{"path": "/", "links": [], "body_length": 100},
                            {"path": "/", "links": [], "body_length": 100}]}
            ],
            "seeds": ["http://a.test/"]
        })
        .to_string();
        assert!(load_world(&text).unwrap_err().to_string().contains("twice"));
    }

    #[test]
    fn rendered_pages_hit_exact_lengths() {
        let links = vec!["http://other.test/".to_string(), "/rel".to_string()];
        for len in [min_page_length(&links), min_page_length(&links) + 1, 1000] {
            let body = render_page(&links, len).unwrap();
            assert_eq!(body.len() as u64, len);
            assert!(body.contains("href=\"http://other.test/\""));
        }
        assert!(render_page(&links, 10).is_err());
        assert_eq!(render_blockpage(200).unwrap().len(), 200);
    }

    #[test]
    fn expected_verdicts_cover_the_six_checks() {
        let text = serde_json::json!({
            "domains": [
                {"name": "c1.test", "filtered": true,
                 "resolver_behaviors": {"fake": {"kind": "intercept", "address": "1.2.3.4"}}},
                {"name": "c2.test", "filtered": true,
                 "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                {"name": "c3.test", "filtered": true,
                 "resolver_behaviors": {"measurement": {"kind": "poison", "address": "10.1.2.3"}}},
                {"name": "c4.test", "filtered": true,
                 "pages": [{"path": "/", "links": [], "body_length": 500}],
                 "resolver_behaviors": {"measurement": {"kind": "poison", "address": "198.18.99.99"}}},
                {"name": "c5.test", "filtered": true, "http_dead": true,
                 "resolver_behaviors": {"measurement": {"kind": "redirect_to_blockpage", "length": 300}}},
                {"name": "c6.test", "filtered": true,
                 "pages": [{"path": "/", "links": [], "body_length": 1000}],
                 "resolver_behaviors": {"measurement": {"kind": "redirect_to_blockpage", "length": 400}}},
                {"name": "clean.test", "filtered": false,
                 "pages": [{"path": "/", "links": [], "body_length": 600}]}
            ],
            "seeds": ["http://c1.test/"]
        })
        .to_string();
        let world = load_world(&text).unwrap();
        let expect = [
            ("c1.test", FilterStatus::Filtered, FilterReason::InterceptedFake),
            ("c2.test", FilterStatus::Filtered, FilterReason::MeasurementTimeout),
            ("c3.test", FilterStatus::Filtered, FilterReason::PrivateIp),
            ("c4.test", FilterStatus::Filtered, FilterReason::MeasurementHttpDead),
            ("c5.test", FilterStatus::Filtered, FilterReason::ControlHttpDead),
            ("c6.test", FilterStatus::Filtered, FilterReason::ContentLengthMismatch),
            ("clean.test", FilterStatus::NotFiltered, FilterReason::None),
        ];
        for (name, status, reason) in expect {
            let d = DomainName::parse(name).unwrap();
            assert_eq!(expected_verdict(&world, &d, 0.5), (status, reason), "{name}");
        }
    }

    #[test]
    fn address_pool_spans_test_ranges() {
        let mut pool = AddressPool::new();
        assert_eq!(pool.next(), Ipv4Addr::new(192, 0, 2, 1));
        for _ in 1..254 {
            pool.next();
        }
        assert_eq!(pool.next(), Ipv4Addr::new(198, 51, 100, 1));
        let mut pool = AddressPool { index: 762 };
        assert_eq!(pool.next(), Ipv4Addr::new(198, 18, 0, 1));
    }
}
