//! Analysis outputs, all recomputed from the raw event log: run
//! summaries, baseline comparisons, category/location breakdowns and
//! degree rankings. Reports hold no state of their own.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::check::{check_batch, CheckConfig, FilterStatus};
use crate::domain::DomainName;
use crate::enrich::{CategoryCache, GeoDb};
use crate::error::{Error, Result};
use crate::eventlog::{validate_contiguous, Event, EventKind};
use crate::net::Network;
use crate::profile::ResolverProfile;
use crate::psl::{registrable_domain, SuffixRuleSet};

/// Domains removed from counts before reporting: one registrable domain
/// per line, `#` comments. A host is excluded when it equals an entry or
/// sits under one.
#[derive(Debug, Clone, Default)]
pub struct ExclusionList {
    entries: BTreeSet<String>,
}

impl ExclusionList {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            entries.insert(DomainName::parse(line)?.as_str().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn is_excluded(&self, domain: &DomainName) -> bool {
        self.entries.contains(domain.as_str())
            || self.entries.iter().any(|e| domain.as_str().ends_with(&format!(".{e}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub country: String,
    pub extracted_urls: u64,
    pub filtered_urls: u64,
    pub filtered_domains: u64,
    pub filtered_domains_excl: u64,
}

/// Tally one run's event log. Extracted URLs are unique post-filtering
/// link targets; filtered domains are the unique domains admitted to the
/// crawl (seeds included).
pub fn summarize(events: &[Event], exclusions: &ExclusionList) -> Result<RunSummary> {
    validate_contiguous(events)?;
    let mut country = String::new();
    let mut filtered_domains_verdicts: HashSet<&DomainName> = HashSet::new();
    let mut extracted: BTreeSet<&str> = BTreeSet::new();
    let mut links: Vec<(&str, &DomainName)> = Vec::new();
    let mut enqueued_hosts: BTreeSet<DomainName> = BTreeSet::new();

    for event in events {
        match &event.kind {
            EventKind::Verdict { domain, status, country: c, .. } => {
                if country.is_empty() {
                    country = c.clone();
                }
                if *status == FilterStatus::Filtered {
                    filtered_domains_verdicts.insert(domain);
                }
            }
            EventKind::Link { to_url, to_domain, .. } => {
                extracted.insert(to_url);
                links.push((to_url, to_domain));
            }
            EventKind::Enqueue { url, .. } => {
                let parsed = Url::parse(url)
                    .map_err(|e| Error::Report(format!("bad enqueue url {url:?}: {e}")))?;
                let host = crate::urls::url_domain(&parsed)?;
                enqueued_hosts.insert(host);
            }
            EventKind::Fetch { .. } => {}
        }
    }

    let filtered_urls: BTreeSet<&str> = links
        .iter()
        .filter(|(_, domain)| filtered_domains_verdicts.contains(domain))
        .map(|(url, _)| *url)
        .collect();
    let filtered_domains = enqueued_hosts.len() as u64;
    let filtered_domains_excl =
        enqueued_hosts.iter().filter(|d| !exclusions.is_excluded(d)).count() as u64;

    Ok(RunSummary {
        country,
        extracted_urls: extracted.len() as u64,
        filtered_urls: filtered_urls.len() as u64,
        filtered_domains,
        filtered_domains_excl,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub country: String,
    pub baseline_count: u64,
    pub ours_count: u64,
    pub exclusions_applied: Vec<String>,
}

/// Parse a seed list: CSV with the URL in the first column, optional
/// header row and optional category columns.
pub fn parse_seed_list(text: &str) -> Result<Vec<Url>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap().trim().trim_matches('"');
        if i == 0 && first.eq_ignore_ascii_case("url") {
            continue; // header row
        }
        let raw = if first.contains("://") { first.to_string() } else { format!("http://{first}/") };
        let url = crate::urls::normalize_url(&raw, None)
            .map_err(|e| Error::Report(format!("seed line {}: {e}", i + 1)))?;
        if seen.insert(url.as_str().to_string()) {
            out.push(url);
        }
    }
    Ok(out)
}

/// Re-verify a baseline list through the filtering check and compare its
/// filtered count against ours, under identical exclusions. The baseline
/// is never trusted as-is.
pub fn compare(
    network: &dyn Network,
    ours_filtered: &BTreeSet<DomainName>,
    baseline_csv: &str,
    profile: &ResolverProfile,
    config: &CheckConfig,
    exclusions: &ExclusionList,
    parallelism: usize,
) -> Result<ComparisonRow> {
    let urls = parse_seed_list(baseline_csv)?;
    let mut domains: Vec<DomainName> = Vec::new();
    let mut seen = HashSet::new();
    for url in &urls {
        let host = crate::urls::url_domain(url)?;
        if seen.insert(host.clone()) {
            domains.push(host);
        }
    }
    let verdicts = check_batch(network, &domains, profile, config, parallelism);
    let baseline_count = verdicts
        .iter()
        .filter(|v| v.is_filtered() && !exclusions.is_excluded(&v.domain))
        .count() as u64;
    let ours_count = ours_filtered.iter().filter(|d| !exclusions.is_excluded(d)).count() as u64;
    Ok(ComparisonRow {
        country: profile.country.clone(),
        baseline_count,
        ours_count,
        exclusions_applied: exclusions.entries().map(str::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub key: String,
    pub count: u64,
    pub fraction: f64,
}

/// Group domains by primary category label; unlabeled domains land in an
/// explicit "unknown" bucket. Fractions are over all input domains.
pub fn breakdown_categories(domains: &BTreeSet<DomainName>, categories: &CategoryCache) -> Vec<BreakdownRow> {
    let keys = domains.iter().map(|d| {
        categories.categories(d).first().map(|l| l.name.clone()).unwrap_or_else(|| "unknown".to_string())
    });
    bucket(keys, domains.len())
}

/// Group domains by the country hosting them: control-resolve each name
/// and locate the first address. Unresolvable or unlocatable hosts land
/// in "unknown".
pub fn breakdown_host_country(
    network: &dyn Network,
    domains: &BTreeSet<DomainName>,
    profile: &ResolverProfile,
    config: &CheckConfig,
    db: &GeoDb,
) -> Vec<BreakdownRow> {
    let keys = domains.iter().map(|d| {
        let outcome = network.resolve(d, &profile.control, config.timeout());
        outcome
            .first_address()
            .and_then(|addr| db.lookup(addr).country)
            .unwrap_or_else(|| "unknown".to_string())
    });
    bucket(keys, domains.len())
}

fn bucket(keys: impl Iterator<Item = String>, total: usize) -> Vec<BreakdownRow> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for key in keys {
        *counts.entry(key).or_insert(0) += 1;
    }
    let total = total.max(1) as f64;
    let mut rows: Vec<BreakdownRow> = counts
        .into_iter()
        .map(|(key, count)| BreakdownRow { key, count, fraction: count as f64 / total })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Summary(RunSummary),
    Comparison(ComparisonRow),
    Breakdown { dimension: String, rows: Vec<BreakdownRow> },
    Ranking { direction: String, rows: Vec<RankingRow> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub domain: DomainName,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write a report with stable column order and deterministic formatting.
/// Returns the number of bytes written.
pub fn emit(report: &Report, format: ReportFormat, out: &mut dyn Write) -> Result<usize> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => render_csv(report).into_bytes(),
    };
    out.write_all(&bytes)?;
    Ok(bytes.len())
}

fn render_csv(report: &Report) -> String {
    match report {
        Report::Summary(s) => format!(
            "country,extracted_urls,filtered_urls,filtered_domains,filtered_domains_excl\n{},{},{},{},{}\n",
            s.country, s.extracted_urls, s.filtered_urls, s.filtered_domains, s.filtered_domains_excl
        ),
        Report::Comparison(c) => format!(
            "country,baseline_count,ours_count,exclusions_applied\n{},{},{},{}\n",
            c.country,
            c.baseline_count,
            c.ours_count,
            c.exclusions_applied.join(";")
        ),
        Report::Breakdown { dimension, rows } => {
            let mut out = String::from("dimension,key,count,fraction\n");
            for row in rows {
                out.push_str(&format!("{dimension},{},{},{:.6}\n", row.key, row.count, row.fraction));
            }
            out
        }
        Report::Ranking { direction, rows } => {
            let mut out = String::from("direction,domain,count\n");
            for row in rows {
                out.push_str(&format!("{direction},{},{}\n", row.domain, row.count));
            }
            out
        }
    }
}

/// Independent single-pass degree recount from raw events, sharing
/// nothing with `FilteredGraph`: distinct filtered neighbor registrables
/// per filtered registrable domain. Returns (backlinks, forward).
pub fn recount_degrees(
    events: &[Event],
    rules: &SuffixRuleSet,
) -> (BTreeMap<DomainName, u64>, BTreeMap<DomainName, u64>) {
    let mut filtered: HashSet<&DomainName> = HashSet::new();
    for event in events {
        if let EventKind::Verdict { domain, status: FilterStatus::Filtered, .. } = &event.kind {
            filtered.insert(domain);
        }
    }
    let mut in_neighbors: HashMap<DomainName, BTreeSet<DomainName>> = HashMap::new();
    let mut out_neighbors: HashMap<DomainName, BTreeSet<DomainName>> = HashMap::new();
    for event in events {
        if let EventKind::Link { from_domain, to_domain, .. } = &event.kind {
            if !filtered.contains(from_domain) || !filtered.contains(to_domain) {
                continue;
            }
            let from = registrable_domain(from_domain, rules).unwrap_or_else(|| from_domain.clone());
            let to = registrable_domain(to_domain, rules).unwrap_or_else(|| to_domain.clone());
            if from == to {
                continue;
            }
            in_neighbors.entry(to.clone()).or_default().insert(from.clone());
            out_neighbors.entry(from).or_default().insert(to);
        }
    }
    let collapse = |m: HashMap<DomainName, BTreeSet<DomainName>>| {
        m.into_iter().map(|(k, v)| (k, v.len() as u64)).collect::<BTreeMap<_, _>>()
    };
    (collapse(in_neighbors), collapse(out_neighbors))
}
