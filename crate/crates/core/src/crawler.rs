//! The recursive traversal loop: fetch pages of confirmed-filtered URLs,
//! extract links, verify the filter status of every newly seen domain,
//! and queue links on filtered domains for crawling.
//!
//! A single coordinator owns all state and the event log; page fetches
//! and filtering probes run on a bounded worker pool. Page fetches
//! resolve hosts through the control resolver (the crawler needs the
//! uncensored view of the content), while the probes consult the
//! measurement resolvers.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::check::{check_domain, CheckConfig, FilterVerdict};
use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::eventlog::{Event, EventKind, EventSink};
use crate::html::extract_links;
use crate::linkgraph::FilteredGraph;
use crate::net::{DnsOutcomeKind, Network, PageFetch, PageFetchError};
use crate::profile::ResolverProfile;
use crate::psl::{registrable_domain, SuffixRuleSet};
use crate::urls::{default_asset_extensions, is_self_reference, is_static_asset, normalize_url, url_domain};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlTask {
    /// Normalized URL.
    pub url: String,
    pub depth: u32,
    pub referrer_domain: Option<DomainName>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrawlConfig {
    pub max_depth: u32,
    pub parallelism: usize,
    /// Minimum spacing between fetches against the same host.
    pub per_host_delay_ms: u64,
    pub asset_extensions: std::collections::HashSet<String>,
    pub max_page_bytes: u64,
    pub max_redirects: u32,
    /// Wall-clock stop; the run snapshot stays resumable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<DateTime<Utc>>,
    /// Stop after this many page fetches; used for controlled
    /// interruption in tests and operations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pages: Option<u64>,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            max_depth: 100,
            parallelism: 8,
            per_host_delay_ms: 500,
            asset_extensions: default_asset_extensions(),
            max_page_bytes: 2 * 1024 * 1024,
            max_redirects: 5,
            deadline: None,
            max_pages: None,
        }
    }
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.parallelism < 1 {
            return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrawlOutcome {
    /// Frontier exhausted: no more filtered URLs to visit.
    Completed,
    DeadlineReached,
    PageBudgetReached,
    /// The control resolver answered nothing during seed verification.
    ControlUnreachable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlStats {
    /// Unique extracted URLs after asset/self-link removal.
    pub urls_extracted: u64,
    /// Of those, URLs whose domain verified filtered.
    pub urls_filtered: u64,
    /// Unique filtered domains admitted to the crawl.
    pub domains_filtered: u64,
    /// Fetch attempts (each unique URL at most once).
    pub pages_fetched: u64,
}

/// Final state of a crawl. The snapshot form (minus the graph, which is
/// derivable from the event log) is what gets persisted for resumption.
#[derive(Debug)]
pub struct CrawlState {
    pub country: String,
    pub visited_urls: BTreeSet<String>,
    pub verdicts: HashMap<DomainName, FilterVerdict>,
    pub frontier: Vec<CrawlTask>,
    pub discovered: BTreeSet<DomainName>,
    pub stats: CrawlStats,
    pub graph: FilteredGraph,
    pub outcome: CrawlOutcome,
    pub next_seq: u64,
}

impl CrawlState {
    pub fn snapshot(&self) -> CrawlSnapshot {
        CrawlSnapshot {
            country: self.country.clone(),
            visited_urls: self.visited_urls.iter().cloned().collect(),
            verdicts: self
                .verdicts
                .iter()
                .map(|(k, v)| (k.as_str().to_string(), v.clone()))
                .collect(),
            frontier: self.frontier.clone(),
            discovered: self.discovered.iter().cloned().collect(),
            next_seq: self.next_seq,
        }
    }
}

/// Persistent form of an interrupted crawl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrawlSnapshot {
    pub country: String,
    pub visited_urls: Vec<String>,
    pub verdicts: BTreeMap<String, FilterVerdict>,
    pub frontier: Vec<CrawlTask>,
    pub discovered: Vec<DomainName>,
    pub next_seq: u64,
}

/// Crawl from scratch.
pub fn crawl(
    network: &dyn Network,
    seeds: &[Url],
    profile: &ResolverProfile,
    check_cfg: &CheckConfig,
    crawl_cfg: &CrawlConfig,
    rules: &SuffixRuleSet,
    sink: &dyn EventSink,
) -> Result<CrawlState> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seed URLs".into()));
    }
    check_cfg.validate()?;
    crawl_cfg.validate()?;
    let init = RunInit {
        seeds: seeds.to_vec(),
        visited: BTreeSet::new(),
        verdicts: HashMap::new(),
        frontier: VecDeque::new(),
        discovered: BTreeSet::new(),
        prior_links: Vec::new(),
        prior_fetches: 0,
        next_seq: 1,
    };
    run(network, init, profile, check_cfg, crawl_cfg, rules, sink)
}

/// Continue a previous run. `prior_events` must be the events already in
/// the log; they rebuild the link records that reports and the graph are
/// derived from. Visited URLs are never refetched and cached verdicts are
/// honored.
#[allow(clippy::too_many_arguments)]
pub fn resume(
    network: &dyn Network,
    snapshot: CrawlSnapshot,
    prior_events: &[Event],
    profile: &ResolverProfile,
    check_cfg: &CheckConfig,
    crawl_cfg: &CrawlConfig,
    rules: &SuffixRuleSet,
    sink: &dyn EventSink,
) -> Result<CrawlState> {
    if snapshot.country != profile.country {
        return Err(Error::SnapshotCountryMismatch {
            snapshot: snapshot.country,
            profile: profile.country.clone(),
        });
    }
    check_cfg.validate()?;
    crawl_cfg.validate()?;

    let mut verdicts = HashMap::new();
    for (name, verdict) in snapshot.verdicts {
        verdicts.insert(DomainName::parse(&name)?, verdict);
    }
    let mut prior_links = Vec::new();
    let mut prior_fetches = 0u64;
    let mut max_seq = 0u64;
    for event in prior_events {
        max_seq = max_seq.max(event.seq);
        match &event.kind {
            EventKind::Link { from_url, to_url, from_domain, to_domain } => prior_links.push(LinkRecord {
                from_url: from_url.clone(),
                to_url: to_url.clone(),
                from_domain: from_domain.clone(),
                to_domain: to_domain.clone(),
            }),
            EventKind::Fetch { .. } => prior_fetches += 1,
            _ => {}
        }
    }

    let init = RunInit {
        seeds: Vec::new(),
        visited: snapshot.visited_urls.into_iter().collect(),
        verdicts,
        frontier: snapshot.frontier.into(),
        discovered: snapshot.discovered.into_iter().collect(),
        prior_links,
        prior_fetches,
        next_seq: snapshot.next_seq.max(max_seq + 1),
    };
    run(network, init, profile, check_cfg, crawl_cfg, rules, sink)
}

#[derive(Debug, Clone)]
struct LinkRecord {
    from_url: String,
    to_url: String,
    from_domain: DomainName,
    to_domain: DomainName,
}

struct RunInit {
    seeds: Vec<Url>,
    visited: BTreeSet<String>,
    verdicts: HashMap<DomainName, FilterVerdict>,
    frontier: VecDeque<CrawlTask>,
    discovered: BTreeSet<DomainName>,
    prior_links: Vec<LinkRecord>,
    prior_fetches: u64,
    next_seq: u64,
}

enum Job {
    Fetch(CrawlTask),
    Probe(DomainName),
}

enum JobDone {
    Fetched { task: CrawlTask, outcome: std::result::Result<PageFetch, String> },
    Probed { domain: DomainName, verdict: FilterVerdict },
}

/// A URL waiting for its host's politeness window.
struct Delayed {
    due: Instant,
    order: u64,
    task: CrawlTask,
}

impl PartialEq for Delayed {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.order == other.order
    }
}
impl Eq for Delayed {}
impl PartialOrd for Delayed {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Delayed {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap by due time, then arrival order.
        other.due.cmp(&self.due).then(other.order.cmp(&self.order))
    }
}

fn run(
    network: &dyn Network,
    init: RunInit,
    profile: &ResolverProfile,
    check_cfg: &CheckConfig,
    crawl_cfg: &CrawlConfig,
    rules: &SuffixRuleSet,
    sink: &dyn EventSink,
) -> Result<CrawlState> {
    let mut coord = Coordinator {
        visited: init.visited,
        verdicts: init.verdicts,
        ready: init.frontier,
        delayed: BinaryHeap::new(),
        probe_queue: VecDeque::new(),
        probing: HashSet::new(),
        pending: HashMap::new(),
        discovered: init.discovered,
        links: init.prior_links,
        pages_fetched: init.prior_fetches,
        prior_fetches: init.prior_fetches,
        fetches_dispatched: 0,
        next_seq: init.next_seq,
        next_order: 0,
        host_next_slot: HashMap::new(),
        seed_domains: BTreeSet::new(),
        stop_fetching: false,
        outcome: CrawlOutcome::Completed,
        sink,
        country: profile.country.clone(),
        rules,
        crawl_cfg,
    };

    // Seeds enter through the same probe machinery as discovered links.
    let mut seen = HashSet::new();
    for seed in &init.seeds {
        let url = seed.as_str().to_string();
        if !seen.insert(url.clone()) {
            continue;
        }
        let host = url_domain(seed)?;
        coord.seed_domains.insert(host.clone());
        let waiting = coord.pending.entry(host.clone()).or_default();
        waiting.push((url, 0, None));
        if coord.probing.insert(host.clone()) && !coord.verdicts.contains_key(&host) {
            coord.probe_queue.push_back(host);
        }
    }
    // Resumed runs may hold cached seed verdicts already.
    coord.probe_queue.retain(|d| !coord.verdicts.contains_key(d));
    let cached: Vec<DomainName> =
        coord.pending.keys().filter(|d| coord.verdicts.contains_key(*d)).cloned().collect();
    for domain in cached {
        coord.release_pending(&domain);
    }

    let workers = crawl_cfg.parallelism.max(1);
    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let job_rx = Mutex::new(job_rx);
    let (done_tx, done_rx) = mpsc::channel::<JobDone>();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let job_rx = &job_rx;
            let done_tx = done_tx.clone();
            scope.spawn(move || loop {
                let job = match job_rx.lock().unwrap().recv() {
                    Ok(job) => job,
                    Err(_) => break,
                };
                let done = match job {
                    Job::Fetch(task) => {
                        let outcome = fetch_task(network, &task, profile, check_cfg, crawl_cfg);
                        JobDone::Fetched { task, outcome }
                    }
                    Job::Probe(domain) => {
                        let verdict = check_domain(network, &domain, profile, check_cfg);
                        JobDone::Probed { domain, verdict }
                    }
                };
                if done_tx.send(done).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);

        let mut in_flight = 0usize;
        loop {
            coord.refresh_stop();
            // Fill worker capacity.
            while in_flight < workers {
                match coord.next_job() {
                    Some(job) => {
                        job_tx.send(job).expect("workers outlive the coordinator loop");
                        in_flight += 1;
                    }
                    None => break,
                }
            }
            if in_flight == 0 {
                match coord.earliest_delay() {
                    Some(due) if !coord.stop_fetching => {
                        let now = Instant::now();
                        if due > now {
                            std::thread::sleep(due - now);
                        }
                        continue;
                    }
                    _ => break, // drained
                }
            }
            let timeout = coord
                .earliest_delay()
                .map(|due| due.saturating_duration_since(Instant::now()))
                .unwrap_or(Duration::from_millis(200))
                .min(Duration::from_millis(200));
            match done_rx.recv_timeout(timeout.max(Duration::from_millis(1))) {
                Ok(done) => {
                    in_flight -= 1;
                    coord.handle(done)?;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }
        drop(job_tx);
        Ok(())
    })?;

    coord.finish(init.seeds.is_empty())
}

/// Resolve the task's host via the control resolver and fetch the page.
fn fetch_task(
    network: &dyn Network,
    task: &CrawlTask,
    profile: &ResolverProfile,
    check_cfg: &CheckConfig,
    crawl_cfg: &CrawlConfig,
) -> std::result::Result<PageFetch, String> {
    let url = Url::parse(&task.url).map_err(|e| format!("bad task url: {e}"))?;
    let host = url_domain(&url).map_err(|e| format!("bad task host: {e}"))?;
    let control = network.resolve(&host, &profile.control, check_cfg.timeout());
    let address = match control.kind {
        DnsOutcomeKind::Answered => control.addresses[0],
        other => return Err(format!("control resolution failed: {other:?}")),
    };
    network
        .fetch_page(address, &url, check_cfg.timeout(), crawl_cfg.max_page_bytes, crawl_cfg.max_redirects)
        .map_err(|e: PageFetchError| e.to_string())
}

struct Coordinator<'a> {
    visited: BTreeSet<String>,
    verdicts: HashMap<DomainName, FilterVerdict>,
    ready: VecDeque<CrawlTask>,
    delayed: BinaryHeap<Delayed>,
    probe_queue: VecDeque<DomainName>,
    probing: HashSet<DomainName>,
    /// URLs waiting for a domain's verdict: (url, depth, referrer).
    pending: HashMap<DomainName, Vec<(String, u32, Option<DomainName>)>>,
    discovered: BTreeSet<DomainName>,
    links: Vec<LinkRecord>,
    pages_fetched: u64,
    prior_fetches: u64,
    fetches_dispatched: u64,
    next_seq: u64,
    next_order: u64,
    host_next_slot: HashMap<String, Instant>,
    seed_domains: BTreeSet<DomainName>,
    stop_fetching: bool,
    outcome: CrawlOutcome,
    sink: &'a dyn EventSink,
    country: String,
    rules: &'a SuffixRuleSet,
    crawl_cfg: &'a CrawlConfig,
}

impl Coordinator<'_> {
    fn log(&mut self, kind: EventKind) -> Result<()> {
        let event = Event { seq: self.next_seq, kind };
        self.next_seq += 1;
        self.sink.append(&event)
    }

    fn refresh_stop(&mut self) {
        if self.stop_fetching {
            return;
        }
        if let Some(deadline) = self.crawl_cfg.deadline {
            if Utc::now() >= deadline {
                self.stop_fetching = true;
                self.outcome = CrawlOutcome::DeadlineReached;
            }
        }
        // The budget covers the whole logical run, replayed fetches
        // included, and gates dispatch so the count is exact.
        if let Some(budget) = self.crawl_cfg.max_pages {
            if self.prior_fetches + self.fetches_dispatched >= budget {
                self.stop_fetching = true;
                self.outcome = CrawlOutcome::PageBudgetReached;
            }
        }
    }

    /// Probes always run; fetches only while not stopped and politeness
    /// allows.
    fn next_job(&mut self) -> Option<Job> {
        if let Some(domain) = self.probe_queue.pop_front() {
            return Some(Job::Probe(domain));
        }
        self.refresh_stop();
        if self.stop_fetching {
            return None;
        }
        let now = Instant::now();
        // Parked tasks already hold their host's slot reservation.
        if let Some(top) = self.delayed.peek() {
            if top.due <= now {
                let task = self.delayed.pop().unwrap().task;
                self.fetches_dispatched += 1;
                return Some(Job::Fetch(task));
            }
        }
        while let Some(task) = self.ready.pop_front() {
            match self.admit_fetch(task, now) {
                Some(job) => return Some(job),
                None => continue, // parked until the host's slot comes up
            }
        }
        None
    }

    /// Politeness gate: either dispatch now or park until the host's slot.
    fn admit_fetch(&mut self, task: CrawlTask, now: Instant) -> Option<Job> {
        let host = Url::parse(&task.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default();
        let delay = Duration::from_millis(self.crawl_cfg.per_host_delay_ms);
        let slot = self.host_next_slot.entry(host).or_insert(now);
        if *slot > now {
            let due = *slot;
            *slot += delay;
            self.next_order += 1;
            self.delayed.push(Delayed { due, order: self.next_order, task });
            return None;
        }
        *slot = now + delay;
        self.fetches_dispatched += 1;
        Some(Job::Fetch(task))
    }

    fn earliest_delay(&self) -> Option<Instant> {
        self.delayed.peek().map(|d| d.due)
    }

    fn handle(&mut self, done: JobDone) -> Result<()> {
        match done {
            JobDone::Fetched { task, outcome } => self.handle_fetch(task, outcome),
            JobDone::Probed { domain, verdict } => self.handle_probe(domain, verdict),
        }
    }

    fn handle_fetch(&mut self, task: CrawlTask, outcome: std::result::Result<PageFetch, String>) -> Result<()> {
        self.pages_fetched += 1;
        let task_url = Url::parse(&task.url).expect("tasks carry normalized urls");
        let host = url_domain(&task_url).expect("tasks carry domain hosts");
        match outcome {
            Err(error) => {
                self.log(EventKind::Fetch {
                    url: task.url.clone(),
                    domain: host,
                    depth: task.depth,
                    status: None,
                    body_length: None,
                    final_url: None,
                    error: Some(error),
                })?;
                Ok(())
            }
            Ok(page) => {
                let final_url_str = page.final_url.as_str().to_string();
                self.visited.insert(final_url_str.clone());
                self.log(EventKind::Fetch {
                    url: task.url.clone(),
                    domain: host.clone(),
                    depth: task.depth,
                    status: Some(page.status),
                    body_length: Some(page.body.len() as u64),
                    final_url: (final_url_str != task.url).then_some(final_url_str),
                    error: None,
                })?;
                let mut links = extract_links(&page.body, &page.final_url);
                if let Some(location) = &page.location {
                    // A cross-host redirect is itself an outbound link.
                    if let Ok(url) = normalize_url(location, Some(&page.final_url)) {
                        if !links.contains(&url) {
                            links.push(url);
                        }
                    }
                }
                for link in links {
                    self.handle_link(&task, &host, &page.final_url, link)?;
                }
                Ok(())
            }
        }
    }

    fn handle_link(&mut self, task: &CrawlTask, host: &DomainName, page_url: &Url, link: Url) -> Result<()> {
        if is_static_asset(&link, &self.crawl_cfg.asset_extensions)
            || is_self_reference(&link, host, self.rules)
        {
            return Ok(());
        }
        let Ok(target) = url_domain(&link) else { return Ok(()) };
        self.log(EventKind::Link {
            from_url: page_url.as_str().to_string(),
            to_url: link.as_str().to_string(),
            from_domain: host.clone(),
            to_domain: target.clone(),
        })?;
        self.links.push(LinkRecord {
            from_url: page_url.as_str().to_string(),
            to_url: link.as_str().to_string(),
            from_domain: host.clone(),
            to_domain: target.clone(),
        });

        let depth = task.depth + 1;
        if let Some(verdict) = self.verdicts.get(&target) {
            if verdict.is_filtered() {
                self.try_enqueue(link.as_str(), depth, Some(host.clone()))?;
            }
            return Ok(());
        }
        self.pending.entry(target.clone()).or_default().push((
            link.as_str().to_string(),
            depth,
            Some(host.clone()),
        ));
        if self.probing.insert(target.clone()) {
            self.probe_queue.push_back(target);
        }
        Ok(())
    }

    fn handle_probe(&mut self, domain: DomainName, verdict: FilterVerdict) -> Result<()> {
        self.log(EventKind::verdict(&verdict, &self.country.clone()))?;
        self.verdicts.insert(domain.clone(), verdict);
        self.release_pending(&domain);
        Ok(())
    }

    fn release_pending(&mut self, domain: &DomainName) {
        let Some(waiting) = self.pending.remove(domain) else { return };
        let filtered = self.verdicts.get(domain).map(|v| v.is_filtered()).unwrap_or(false);
        if !filtered {
            return;
        }
        for (url, depth, referrer) in waiting {
            let _ = self.try_enqueue(&url, depth, referrer);
        }
    }

    fn try_enqueue(&mut self, url: &str, depth: u32, referrer: Option<DomainName>) -> Result<()> {
        if depth > self.crawl_cfg.max_depth {
            return Ok(());
        }
        if !self.visited.insert(url.to_string()) {
            return Ok(());
        }
        let parsed = Url::parse(url).expect("enqueue sees normalized urls");
        let host = url_domain(&parsed).expect("enqueue sees domain hosts");
        self.discovered.insert(host);
        self.log(EventKind::Enqueue { url: url.to_string(), depth, referrer_domain: referrer.clone() })?;
        self.ready.push_back(CrawlTask { url: url.to_string(), depth, referrer_domain: referrer });
        Ok(())
    }

    /// Assemble the final state: leftover frontier, derived stats, and
    /// the filtered-link graph built from all link records.
    fn finish(mut self, resumed: bool) -> Result<CrawlState> {
        let mut frontier: Vec<CrawlTask> = self.ready.into_iter().collect();
        let mut delayed: Vec<Delayed> = self.delayed.into_vec();
        delayed.sort_by_key(|d| d.order);
        frontier.extend(delayed.into_iter().map(|d| d.task));

        // Control-unreachable: fresh runs whose every seed probe shows a
        // dead control path.
        if !resumed && !self.seed_domains.is_empty() {
            let all_unreachable = self.seed_domains.iter().all(|d| {
                self.verdicts
                    .get(d)
                    .map(|v| {
                        !v.is_filtered()
                            && matches!(
                                v.evidence.control.as_ref().map(|c| c.kind),
                                Some(DnsOutcomeKind::Timeout) | Some(DnsOutcomeKind::Error)
                            )
                    })
                    .unwrap_or(false)
            });
            if all_unreachable {
                self.outcome = CrawlOutcome::ControlUnreachable;
            }
        }

        let mut graph = FilteredGraph::new();
        for seed in &self.seed_domains {
            if self.verdicts.get(seed).map(|v| v.is_filtered()).unwrap_or(false) {
                graph.add_node(registrable_domain(seed, self.rules).unwrap_or_else(|| seed.clone()));
            }
        }
        let mut extracted: BTreeSet<&str> = BTreeSet::new();
        let mut filtered_urls: BTreeSet<&str> = BTreeSet::new();
        for record in &self.links {
            extracted.insert(&record.to_url);
            let to_filtered =
                self.verdicts.get(&record.to_domain).map(|v| v.is_filtered()).unwrap_or(false);
            let from_filtered =
                self.verdicts.get(&record.from_domain).map(|v| v.is_filtered()).unwrap_or(false);
            if to_filtered {
                filtered_urls.insert(&record.to_url);
                if from_filtered {
                    let from = Url::parse(&record.from_url).expect("records carry normalized urls");
                    let to = Url::parse(&record.to_url).expect("records carry normalized urls");
                    graph.record_link(&from, &to, &self.verdicts, self.rules)?;
                }
            }
        }

        let stats = CrawlStats {
            urls_extracted: extracted.len() as u64,
            urls_filtered: filtered_urls.len() as u64,
            domains_filtered: self.discovered.len() as u64,
            pages_fetched: self.pages_fetched,
        };
        self.sink.flush()?;
        Ok(CrawlState {
            country: self.country,
            visited_urls: self.visited,
            verdicts: self.verdicts,
            frontier,
            discovered: self.discovered,
            stats,
            graph,
            outcome: self.outcome,
            next_seq: self.next_seq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::MemorySink;
    use crate::psl::parse_psl;
    use crate::simnet::{load_world, oracle_discover, serve, WorldSpec};

    fn chain_world() -> WorldSpec {
        load_world(
            &serde_json::json!({
                "domains": [
                    {"name": "f1.test", "filtered": true,
                     "pages": [{"path": "/", "links": ["http://f2.test/", "http://u1.test/"], "body_length": 400}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                    {"name": "f2.test", "filtered": true,
                     "pages": [{"path": "/", "links": ["http://f3.test/", "http://u1.test/page2"], "body_length": 400}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                    {"name": "f3.test", "filtered": true,
                     "pages": [{"path": "/", "links": ["http://f1.test/"], "body_length": 300}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                    {"name": "u1.test", "filtered": false,
                     "pages": [{"path": "/", "links": ["http://f4.test/"], "body_length": 300}]},
                    {"name": "f4.test", "filtered": true,
                     "pages": [{"path": "/", "links": [], "body_length": 200}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}}
                ],
                "seeds": ["http://f1.test/"]
            })
            .to_string(),
        )
        .unwrap()
    }

    fn rules() -> SuffixRuleSet {
        parse_psl("test\n").unwrap()
    }

    fn fast_check() -> CheckConfig {
        CheckConfig { timeout_secs: 0.25, ..CheckConfig::default() }
    }

    fn fast_crawl(parallelism: usize) -> CrawlConfig {
        CrawlConfig { parallelism, per_host_delay_ms: 0, ..CrawlConfig::default() }
    }

    fn seeds(world: &WorldSpec) -> Vec<Url> {
        world.seeds.iter().map(|s| normalize_url(s, None).unwrap()).collect()
    }

    fn discovered_names(state: &CrawlState) -> Vec<&str> {
        state.discovered.iter().map(|d| d.as_str()).collect()
    }

    #[test]
    fn chain_discovery_matches_hand_count() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &fast_crawl(4),
            &rules(),
            &sink,
        )
        .unwrap();

        assert_eq!(discovered_names(&state), vec!["f1.test", "f2.test", "f3.test"]);
        assert_eq!(state.outcome, CrawlOutcome::Completed);
        // Extracted: f2/, u1/, f3/, u1/page2, f1/ — unique after filtering.
        assert_eq!(state.stats.urls_extracted, 5);
        assert_eq!(state.stats.urls_filtered, 3);
        assert_eq!(state.stats.domains_filtered, 3);
        assert_eq!(state.stats.pages_fetched, 3);

        // u1 was checked exactly once and never fetched.
        let events = sink.events();
        let u1 = DomainName::parse("u1.test").unwrap();
        let probes = events
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::Verdict { domain, .. } if domain == &u1))
            .count();
        assert_eq!(probes, 1);
        assert!(!events
            .iter()
            .any(|e| matches!(&e.kind, EventKind::Fetch { domain, .. } if domain == &u1)));

        // Matches the independent oracle.
        let oracle = oracle_discover(&world, &rules(), 100);
        assert_eq!(state.discovered, oracle.discovered);
        let edges: BTreeSet<(DomainName, DomainName)> =
            state.graph.edges().map(|e| (e.from_domain, e.to_domain)).collect();
        assert_eq!(edges, oracle.edges);
    }

    #[test]
    fn visit_once_under_cycles_and_parallelism() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        for parallelism in [1, 8] {
            let sink = MemorySink::new();
            let state = crawl(
                handle.network().as_ref(),
                &seeds(&world),
                &handle.profile("CN"),
                &fast_check(),
                &fast_crawl(parallelism),
                &rules(),
                &sink,
            )
            .unwrap();
            assert_eq!(discovered_names(&state), vec!["f1.test", "f2.test", "f3.test"]);
            let mut fetched = HashSet::new();
            for event in sink.events() {
                if let EventKind::Fetch { url, .. } = &event.kind {
                    assert!(fetched.insert(url.clone()), "{url} fetched twice");
                }
            }
        }
    }

    #[test]
    fn unfiltered_seed_is_dropped_without_fetching() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let seeds = vec![normalize_url("http://u1.test/", None).unwrap()];
        let state = crawl(
            handle.network().as_ref(),
            &seeds,
            &handle.profile("CN"),
            &fast_check(),
            &fast_crawl(2),
            &rules(),
            &sink,
        )
        .unwrap();
        assert!(state.discovered.is_empty());
        assert_eq!(state.stats.pages_fetched, 0);
        let verdicts =
            sink.events().iter().filter(|e| matches!(e.kind, EventKind::Verdict { .. })).count();
        assert_eq!(verdicts, 1);
    }

    #[test]
    fn depth_bound_gates_enqueueing() {
        // d0 -> d1 -> d2 -> d3 -> d4, max_depth 2 admits depths 0..=2.
        let mut domains = Vec::new();
        for i in 0..5 {
            let links: Vec<String> =
                if i < 4 { vec![format!("http://d{}.test/", i + 1)] } else { Vec::new() };
            domains.push(serde_json::json!({
                "name": format!("d{i}.test"), "filtered": true,
                "pages": [{"path": "/", "links": links, "body_length": 300}],
                "resolver_behaviors": {"measurement": {"kind": "timeout"}}
            }));
        }
        let world = load_world(
            &serde_json::json!({"domains": domains, "seeds": ["http://d0.test/"]}).to_string(),
        )
        .unwrap();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let cfg = CrawlConfig { max_depth: 2, ..fast_crawl(2) };
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &cfg,
            &rules(),
            &sink,
        )
        .unwrap();
        assert_eq!(discovered_names(&state), vec!["d0.test", "d1.test", "d2.test"]);
        assert_eq!(state.discovered, oracle_discover(&world, &rules(), 2).discovered);
    }

    #[test]
    fn budget_stop_then_resume_completes_the_crawl() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let profile = handle.profile("CN");

        // Uninterrupted baseline.
        let baseline_sink = MemorySink::new();
        let baseline = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &profile,
            &fast_check(),
            &fast_crawl(1),
            &rules(),
            &baseline_sink,
        )
        .unwrap();

        // Interrupted after a single page.
        let sink = MemorySink::new();
        let cfg = CrawlConfig { max_pages: Some(1), ..fast_crawl(1) };
        let first = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &profile,
            &fast_check(),
            &cfg,
            &rules(),
            &sink,
        )
        .unwrap();
        assert_eq!(first.outcome, CrawlOutcome::PageBudgetReached);
        assert_eq!(first.stats.pages_fetched, 1);
        assert!(!first.frontier.is_empty());

        let resumed = resume(
            handle.network().as_ref(),
            first.snapshot(),
            &sink.events(),
            &profile,
            &fast_check(),
            &fast_crawl(1),
            &rules(),
            &sink,
        )
        .unwrap();
        assert_eq!(resumed.outcome, CrawlOutcome::Completed);
        assert_eq!(resumed.discovered, baseline.discovered);
        assert_eq!(resumed.stats, baseline.stats);

        // Visit-once holds across the kill/resume cycle.
        let mut fetched = HashSet::new();
        for event in sink.events() {
            if let EventKind::Fetch { url, .. } = &event.kind {
                assert!(fetched.insert(url.clone()), "{url} fetched twice across resume");
            }
        }
        // Sequence numbers stay contiguous across the cycle.
        crate::eventlog::validate_contiguous(&sink.events()).unwrap();
    }

    #[test]
    fn expired_deadline_stops_before_fetching() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let cfg = CrawlConfig {
            deadline: Some(chrono::Utc::now() - chrono::Duration::seconds(1)),
            ..fast_crawl(2)
        };
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &cfg,
            &rules(),
            &sink,
        )
        .unwrap();
        assert_eq!(state.outcome, CrawlOutcome::DeadlineReached);
        assert_eq!(state.stats.pages_fetched, 0);
        // Seed verification still ran; its task waits in the frontier.
        assert_eq!(state.frontier.len(), 1);
        assert_eq!(state.discovered.len(), 1);
    }

    #[test]
    fn resume_rejects_country_mismatch() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &fast_crawl(1),
            &rules(),
            &sink,
        )
        .unwrap();
        let err = resume(
            handle.network().as_ref(),
            state.snapshot(),
            &sink.events(),
            &handle.profile("TR"),
            &fast_check(),
            &fast_crawl(1),
            &rules(),
            &sink,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SnapshotCountryMismatch { .. }));
    }

    #[test]
    fn unreachable_control_resolver_aborts_with_state() {
        // A network where everything times out looks exactly like a dead
        // control path during seed verification.
        let net = crate::check::testnet::ScriptNet::default();
        let sink = MemorySink::new();
        let seeds = vec![normalize_url("http://seed.test/", None).unwrap()];
        let profile = crate::check::testnet::test_profile("CN");
        let state =
            crawl(&net, &seeds, &profile, &fast_check(), &fast_crawl(2), &rules(), &sink).unwrap();
        assert_eq!(state.outcome, CrawlOutcome::ControlUnreachable);
        assert!(state.discovered.is_empty());
    }

    #[test]
    fn frontier_never_holds_assets_or_self_references() {
        // f1 links assets, same-site pages and a sibling host of itself.
        let world = load_world(
            &serde_json::json!({
                "domains": [
                    {"name": "f1.test", "filtered": true,
                     "pages": [{"path": "/", "links": [
                        "http://f2.test/app.js",
                        "http://f1.test/other",
                        "http://www.f1.test/mirror",
                        "http://f2.test/real"
                     ], "body_length": 600}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                    {"name": "www.f1.test", "filtered": true,
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}},
                    {"name": "f2.test", "filtered": true,
                     "pages": [{"path": "/real", "links": [], "body_length": 200}],
                     "resolver_behaviors": {"measurement": {"kind": "timeout"}}}
                ],
                "seeds": ["http://f1.test/"]
            })
            .to_string(),
        )
        .unwrap();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &fast_crawl(2),
            &rules(),
            &sink,
        )
        .unwrap();
        // Only the seed and the one acceptable link were admitted.
        let enqueued: Vec<String> = sink
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Enqueue { url, .. } => Some(url.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(enqueued, vec!["http://f1.test/", "http://f2.test/real"]);
        assert_eq!(state.stats.urls_extracted, 1);
    }

    #[test]
    fn single_worker_runs_produce_identical_logs() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let normalize = |events: Vec<crate::eventlog::Event>| -> Vec<serde_json::Value> {
            events
                .into_iter()
                .map(|e| {
                    let mut v = serde_json::to_value(&e).unwrap();
                    strip_timing(&mut v);
                    v
                })
                .collect()
        };
        fn strip_timing(v: &mut serde_json::Value) {
            match v {
                serde_json::Value::Object(map) => {
                    map.remove("checked_at");
                    map.remove("latency_ms");
                    for value in map.values_mut() {
                        strip_timing(value);
                    }
                }
                serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
                _ => {}
            }
        }
        let mut logs = Vec::new();
        for _ in 0..2 {
            let sink = MemorySink::new();
            crawl(
                handle.network().as_ref(),
                &seeds(&world),
                &handle.profile("CN"),
                &fast_check(),
                &fast_crawl(1),
                &rules(),
                &sink,
            )
            .unwrap();
            logs.push(normalize(sink.events()));
        }
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn per_host_delay_spaces_fetches() {
        // Two pages on f2, both linked from f1: the second f2 fetch waits.
        let world = load_world(
            &serde_json::json!({
                "domains": [
                    {"name": "f1.test", "filtered": true,
                     "pages": [{"path": "/", "links": ["http://f2.test/", "http://f2.test/p1"], "body_length": 400}],
                     "resolver_behaviors": {"fake": {"kind": "intercept", "address": "1.2.3.4"}}},
                    {"name": "f2.test", "filtered": true,
                     "pages": [{"path": "/", "links": [], "body_length": 200},
                                {"path": "/p1", "links": [], "body_length": 200}],
                     "resolver_behaviors": {"fake": {"kind": "intercept", "address": "1.2.3.4"}}}
                ],
                "seeds": ["http://f1.test/"]
            })
            .to_string(),
        )
        .unwrap();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let cfg = CrawlConfig { per_host_delay_ms: 150, parallelism: 4, ..CrawlConfig::default() };
        let started = std::time::Instant::now();
        let state = crawl(
            handle.network().as_ref(),
            &seeds(&world),
            &handle.profile("CN"),
            &fast_check(),
            &cfg,
            &rules(),
            &sink,
        )
        .unwrap();
        assert_eq!(state.stats.pages_fetched, 3);
        assert!(started.elapsed() >= Duration::from_millis(150), "politeness delay was skipped");
    }

    #[test]
    fn empty_seed_list_is_a_config_error() {
        let world = chain_world();
        let handle = serve(&world).unwrap();
        let sink = MemorySink::new();
        let err = crawl(
            handle.network().as_ref(),
            &[],
            &handle.profile("CN"),
            &fast_check(),
            &fast_crawl(1),
            &rules(),
            &sink,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
