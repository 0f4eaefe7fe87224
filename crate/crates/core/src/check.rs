//! Domain filtering checks.
//!
//! A domain is judged filtered by comparing what a measurement resolver
//! inside the target country says against an uncensored control resolver,
//! plus a probe of a fake (unallocated) resolver address. Six checks run
//! in a fixed order; the first one that fires decides the verdict.

use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::net::{DnsOutcome, FetchOutcome, Network};
use crate::profile::ResolverProfile;

/// Tunables for a single filtering check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Relative content-length divergence above which content is judged
    /// substituted. Strictly greater-than comparison.
    pub maxdiff: f64,
    /// Per-exchange timeout in seconds.
    pub timeout_secs: f64,
    /// Port for check fetches.
    pub http_port: u16,
    /// Exact-pseudocode mode: both-resolvers-dead reads as not filtered and
    /// the length test uses the raw measurement/control ratio.
    pub strict_alg1: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { maxdiff: 0.5, timeout_secs: 10.0, http_port: 80, strict_alg1: false }
    }
}

impl CheckConfig {
    // The negated float comparisons make NaN fail validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.maxdiff > 0.0) {
            return Err(Error::InvalidConfig("maxdiff must be strictly positive".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("timeout must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Filtered,
    NotFiltered,
    Indeterminate,
}

/// Which check fired. `None` accompanies both clean and indeterminate
/// verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    InterceptedFake,
    MeasurementTimeout,
    PrivateIp,
    MeasurementHttpDead,
    ControlHttpDead,
    ContentLengthMismatch,
    None,
}

/// Everything the check observed while reaching its verdict. Fields are
/// present only if the corresponding exchange actually ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckEvidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake: Option<DnsOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<DnsOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<DnsOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_fetch: Option<FetchOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_fetch: Option<FetchOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub domain: DomainName,
    pub status: FilterStatus,
    pub reason: FilterReason,
    pub evidence: CheckEvidence,
    pub checked_at: DateTime<Utc>,
}

impl FilterVerdict {
    fn filtered(domain: DomainName, reason: FilterReason, evidence: CheckEvidence) -> Self {
        debug_assert!(reason != FilterReason::None);
        Self { domain, status: FilterStatus::Filtered, reason, evidence, checked_at: Utc::now() }
    }

    fn not_filtered(domain: DomainName, evidence: CheckEvidence) -> Self {
        Self {
            domain,
            status: FilterStatus::NotFiltered,
            reason: FilterReason::None,
            evidence,
            checked_at: Utc::now(),
        }
    }

    fn indeterminate(domain: DomainName, evidence: CheckEvidence) -> Self {
        Self {
            domain,
            status: FilterStatus::Indeterminate,
            reason: FilterReason::None,
            evidence,
            checked_at: Utc::now(),
        }
    }

    pub fn is_filtered(&self) -> bool {
        self.status == FilterStatus::Filtered
    }

    /// True if the control resolver produced genuine records, i.e. the
    /// host still exists from an uncensored vantage.
    pub fn control_answered(&self) -> Option<bool> {
        self.evidence.control.as_ref().map(DnsOutcome::is_answered)
    }
}

/// One verdict as serialized to JSON lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub domain: DomainName,
    pub status: FilterStatus,
    pub reason: FilterReason,
    pub country: String,
    pub checked_at: DateTime<Utc>,
    pub evidence: CheckEvidence,
}

impl VerdictRecord {
    pub fn new(verdict: &FilterVerdict, country: &str) -> Self {
        Self {
            domain: verdict.domain.clone(),
            status: verdict.status,
            reason: verdict.reason,
            country: country.to_string(),
            checked_at: verdict.checked_at,
            evidence: verdict.evidence.clone(),
        }
    }
}

/// True for addresses that cannot be a legitimate public answer: RFC1918,
/// loopback, link-local and the unspecified address.
pub fn is_private_ip(address: Ipv4Addr) -> bool {
    address.is_private() || address.is_loopback() || address.is_link_local() || address.is_unspecified()
}

/// Relative content-length divergence, normalized by the control length:
/// |m - c| / max(c, 1).
pub fn content_length_divergence(len_m: u64, len_c: u64) -> f64 {
    let diff = len_m.abs_diff(len_c) as f64;
    diff / (len_c.max(1) as f64)
}

/// The raw ratio test as written in the original pseudocode; only used in
/// strict mode.
pub fn content_length_ratio(len_m: u64, len_c: u64) -> f64 {
    len_m as f64 / (len_c.max(1) as f64)
}

/// Run the full six-check procedure for one domain.
///
/// The checks are evaluated strictly in order; the first positive one
/// decides. No failure escapes as an error: anything unexpected becomes
/// part of the evidence, and a domain dead on both resolvers yields an
/// indeterminate verdict (or not-filtered in strict mode).
pub fn check_domain(
    network: &dyn Network,
    domain: &DomainName,
    profile: &ResolverProfile,
    config: &CheckConfig,
) -> FilterVerdict {
    let timeout = config.timeout();
    let mut evidence = CheckEvidence::default();

    // Check 1: any answer from a non-existent resolver proves in-path
    // interception.
    let fake = network.resolve(domain, profile.primary_fake(), timeout);
    let fake_answered = fake.is_answered();
    evidence.fake = Some(fake);
    if fake_answered {
        return FilterVerdict::filtered(domain.clone(), FilterReason::InterceptedFake, evidence);
    }

    let measurement = network.resolve(domain, profile.primary_measurement(), timeout);
    let control = network.resolve(domain, &profile.control, timeout);
    let m_answered = measurement.is_answered();
    let c_answered = control.is_answered();
    let m_addresses = measurement.addresses.clone();
    let c_addresses = control.addresses.clone();
    evidence.measurement = Some(measurement);
    evidence.control = Some(control);

    // Check 2: measurement dead while control answers.
    if !m_answered && c_answered {
        return FilterVerdict::filtered(domain.clone(), FilterReason::MeasurementTimeout, evidence);
    }
    if !m_answered && !c_answered {
        return if config.strict_alg1 {
            FilterVerdict::not_filtered(domain.clone(), evidence)
        } else {
            FilterVerdict::indeterminate(domain.clone(), evidence)
        };
    }

    // Checks 3-6 only apply when the answer sets have no address in common.
    if m_addresses.iter().any(|a| c_addresses.contains(a)) {
        return FilterVerdict::not_filtered(domain.clone(), evidence);
    }

    let m_ip = m_addresses[0];
    let c_ip = c_addresses.first().copied();

    // Check 3: measurement answered a private address, control a public one.
    if is_private_ip(m_ip) && c_ip.map(|ip| !is_private_ip(ip)).unwrap_or(false) {
        return FilterVerdict::filtered(domain.clone(), FilterReason::PrivateIp, evidence);
    }

    let m_fetch = network.fetch_check(m_ip, config.http_port, domain, timeout);
    let c_fetch = c_ip.map(|ip| network.fetch_check(ip, config.http_port, domain, timeout));
    let m_content = m_fetch.is_content();
    let c_content = c_fetch.as_ref().map(FetchOutcome::is_content).unwrap_or(false);
    let m_len = m_fetch.body_length;
    let c_len = c_fetch.as_ref().and_then(|f| f.body_length);
    evidence.measurement_fetch = Some(m_fetch);
    evidence.control_fetch = c_fetch;

    // Checks 4 and 5: exactly one side serves content.
    if !m_content && c_content {
        return FilterVerdict::filtered(domain.clone(), FilterReason::MeasurementHttpDead, evidence);
    }
    if m_content && !c_content {
        return FilterVerdict::filtered(domain.clone(), FilterReason::ControlHttpDead, evidence);
    }

    // Check 6: both serve content of markedly different length.
    if let (Some(m_len), Some(c_len)) = (m_len, c_len) {
        let divergence = if config.strict_alg1 {
            content_length_ratio(m_len, c_len)
        } else {
            content_length_divergence(m_len, c_len)
        };
        evidence.divergence = Some(divergence);
        if divergence > config.maxdiff {
            return FilterVerdict::filtered(domain.clone(), FilterReason::ContentLengthMismatch, evidence);
        }
    }

    FilterVerdict::not_filtered(domain.clone(), evidence)
}

/// Check many domains concurrently. Results come back in input order and
/// are identical to running [`check_domain`] sequentially; at most
/// `parallelism` probes are in flight at once.
pub fn check_batch(
    network: &dyn Network,
    domains: &[DomainName],
    profile: &ResolverProfile,
    config: &CheckConfig,
    parallelism: usize,
) -> Vec<FilterVerdict> {
    check_batch_paced(network, domains, profile, config, parallelism, None)
}

/// [`check_batch`] with an optional probe rate cap (probes per second
/// across all workers).
pub fn check_batch_paced(
    network: &dyn Network,
    domains: &[DomainName],
    profile: &ResolverProfile,
    config: &CheckConfig,
    parallelism: usize,
    rate_per_sec: Option<f64>,
) -> Vec<FilterVerdict> {
    if domains.is_empty() {
        return Vec::new();
    }
    let workers = parallelism.max(1).min(domains.len());
    if workers == 1 {
        let pacer = rate_per_sec.map(Pacer::new);
        return domains
            .iter()
            .map(|d| {
                if let Some(p) = &pacer {
                    p.wait();
                }
                check_domain(network, d, profile, config)
            })
            .collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<FilterVerdict>>> = (0..domains.len()).map(|_| Mutex::new(None)).collect();
    let pacer = rate_per_sec.map(Pacer::new);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= domains.len() {
                    break;
                }
                if let Some(p) = &pacer {
                    p.wait();
                }
                let verdict = check_domain(network, &domains[i], profile, config);
                *slots[i].lock().unwrap() = Some(verdict);
            });
        }
    });

    slots.into_iter().map(|s| s.into_inner().unwrap().expect("worker filled every slot")).collect()
}

/// Simple shared pacer: hands out evenly spaced start times.
struct Pacer {
    interval: Duration,
    next_free: Mutex<Instant>,
}

impl Pacer {
    fn new(rate_per_sec: f64) -> Self {
        let rate = rate_per_sec.max(0.001);
        Self { interval: Duration::from_secs_f64(1.0 / rate), next_free: Mutex::new(Instant::now()) }
    }

    fn wait(&self) {
        let start_at = {
            let mut next = self.next_free.lock().unwrap();
            let now = Instant::now();
            let at = (*next).max(now);
            *next = at + self.interval;
            at
        };
        let now = Instant::now();
        if start_at > now {
            std::thread::sleep(start_at - now);
        }
    }
}
