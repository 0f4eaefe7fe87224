//! The directed graph of hyperlinks between filtered domains: recording,
//! degree rankings and export.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::check::FilterVerdict;
use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::psl::{registrable_domain, SuffixRuleSet};
use crate::urls::url_domain;

/// One directed edge; weight counts distinct source URLs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEdge {
    pub from_domain: DomainName,
    pub to_domain: DomainName,
    pub weight: u64,
}

/// Hyperlink graph over filtered registrable domains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilteredGraph {
    nodes: BTreeSet<DomainName>,
    /// (from, to) -> distinct source URLs seen for the pair.
    edges: BTreeMap<(DomainName, DomainName), BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Backlinks,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    EdgeCsv,
    AdjacencyJson,
}

impl FilteredGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one observed hyperlink. Both endpoint hosts must already
    /// have cached verdicts; an edge results only when both are filtered
    /// and their registrable domains differ. Returns the edge's current
    /// shape when one was recorded or updated.
    pub fn record_link(
        &mut self,
        from_url: &Url,
        to_url: &Url,
        verdicts: &HashMap<DomainName, FilterVerdict>,
        rules: &SuffixRuleSet,
    ) -> Result<Option<LinkEdge>> {
        let from_host = url_domain(from_url)?;
        let to_host = url_domain(to_url)?;
        let from_verdict = verdicts
            .get(&from_host)
            .ok_or_else(|| Error::InvalidConfig(format!("no cached verdict for {from_host}")))?;
        let to_verdict = verdicts
            .get(&to_host)
            .ok_or_else(|| Error::InvalidConfig(format!("no cached verdict for {to_host}")))?;
        if !from_verdict.is_filtered() || !to_verdict.is_filtered() {
            return Ok(None);
        }
        let from = registrable_domain(&from_host, rules).unwrap_or(from_host);
        let to = registrable_domain(&to_host, rules).unwrap_or(to_host);
        if from == to {
            return Ok(None);
        }
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        let sources = self.edges.entry((from.clone(), to.clone())).or_default();
        sources.insert(from_url.as_str().to_string());
        Ok(Some(LinkEdge { from_domain: from, to_domain: to, weight: sources.len() as u64 }))
    }

    /// Add an isolated node (e.g. a filtered seed that linked nowhere).
    pub fn add_node(&mut self, domain: DomainName) {
        self.nodes.insert(domain);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DomainName> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = LinkEdge> + '_ {
        self.edges.iter().map(|((from, to), sources)| LinkEdge {
            from_domain: from.clone(),
            to_domain: to.clone(),
            weight: sources.len() as u64,
        })
    }

    /// Distinct in-neighbor count per domain.
    pub fn backlink_counts(&self) -> BTreeMap<DomainName, u64> {
        let mut counts: BTreeMap<DomainName, u64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for (_, to) in self.edges.keys() {
            *counts.entry(to.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Distinct out-neighbor count per domain.
    pub fn forward_counts(&self) -> BTreeMap<DomainName, u64> {
        let mut counts: BTreeMap<DomainName, u64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for (from, _) in self.edges.keys() {
            *counts.entry(from.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Weighted variant: sums edge weights instead of counting neighbors.
    pub fn weighted_counts(&self, direction: Direction) -> BTreeMap<DomainName, u64> {
        let mut counts: BTreeMap<DomainName, u64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for ((from, to), sources) in &self.edges {
            let key = match direction {
                Direction::Backlinks => to,
                Direction::Forward => from,
            };
            *counts.entry(key.clone()).or_insert(0) += sources.len() as u64;
        }
        counts
    }

    /// Top `n` domains by degree, descending, ties broken lexicographically.
    /// `exclude` removes domains from consideration before ranking.
    pub fn top_n(
        &self,
        direction: Direction,
        n: usize,
        exclude: &dyn Fn(&DomainName) -> bool,
    ) -> Vec<(DomainName, u64)> {
        let counts = match direction {
            Direction::Backlinks => self.backlink_counts(),
            Direction::Forward => self.forward_counts(),
        };
        let mut ranked: Vec<(DomainName, u64)> =
            counts.into_iter().filter(|(d, _)| !exclude(d)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(n);
        ranked
    }

    /// Serialize losslessly (nodes, edges, weights) with stable ordering.
    pub fn export(&self, format: ExportFormat) -> Result<Vec<u8>> {
        match format {
            ExportFormat::EdgeCsv => {
                let mut out = String::from("from_domain,to_domain,weight\n");
                for edge in self.edges() {
                    out.push_str(&format!("{},{},{}\n", edge.from_domain, edge.to_domain, edge.weight));
                }
                // Isolated nodes travel as node-only rows with empty target.
                for node in &self.nodes {
                    if !self.edges.keys().any(|(f, t)| f == node || t == node) {
                        out.push_str(&format!("{node},,0\n"));
                    }
                }
                Ok(out.into_bytes())
            }
            ExportFormat::AdjacencyJson => {
                #[derive(Serialize)]
                struct Adjacency<'a> {
                    out: Vec<OutEdge<'a>>,
                    #[serde(rename = "in")]
                    incoming: Vec<&'a str>,
                }
                #[derive(Serialize)]
                struct OutEdge<'a> {
                    domain: &'a str,
                    weight: u64,
                }
                let mut map: BTreeMap<&str, Adjacency> = self
                    .nodes
                    .iter()
                    .map(|n| (n.as_str(), Adjacency { out: Vec::new(), incoming: Vec::new() }))
                    .collect();
                for ((from, to), sources) in &self.edges {
                    map.get_mut(from.as_str())
                        .expect("edge endpoints are nodes")
                        .out
                        .push(OutEdge { domain: to.as_str(), weight: sources.len() as u64 });
                    map.get_mut(to.as_str()).expect("edge endpoints are nodes").incoming.push(from.as_str());
                }
                Ok(serde_json::to_vec_pretty(&map)?)
            }
        }
    }

    /// Rebuild the graph from a run's event log: verdicts first, then one
    /// record_link per link event whose endpoints both verified filtered.
    pub fn from_events(events: &[crate::eventlog::Event], rules: &SuffixRuleSet) -> Result<Self> {
        use crate::eventlog::EventKind;
        let mut verdicts: HashMap<DomainName, FilterVerdict> = HashMap::new();
        for event in events {
            if let EventKind::Verdict { domain, status, reason, checked_at, evidence, .. } = &event.kind {
                verdicts.insert(
                    domain.clone(),
                    FilterVerdict {
                        domain: domain.clone(),
                        status: *status,
                        reason: *reason,
                        evidence: evidence.clone(),
                        checked_at: *checked_at,
                    },
                );
            }
        }
        let mut graph = Self::new();
        // Seeds (enqueues without a referrer) appear even when isolated.
        for event in events {
            if let EventKind::Enqueue { url, referrer_domain: None, .. } = &event.kind {
                let Ok(parsed) = Url::parse(url) else { continue };
                let Ok(host) = url_domain(&parsed) else { continue };
                if verdicts.get(&host).map(|v| v.is_filtered()).unwrap_or(false) {
                    graph.add_node(registrable_domain(&host, rules).unwrap_or(host));
                }
            }
        }
        for event in events {
            if let EventKind::Link { from_url, to_url, from_domain, to_domain } = &event.kind {
                let both_filtered = [from_domain, to_domain]
                    .iter()
                    .all(|d| verdicts.get(d).map(|v| v.is_filtered()).unwrap_or(false));
                if !both_filtered {
                    continue;
                }
                let from = Url::parse(from_url).map_err(|e| Error::Report(e.to_string()))?;
                let to = Url::parse(to_url).map_err(|e| Error::Report(e.to_string()))?;
                graph.record_link(&from, &to, &verdicts, rules)?;
            }
        }
        Ok(graph)
    }

    /// Parse an edge CSV produced by [`FilteredGraph::export`]. Weights
    /// are restored as synthetic distinct sources.
    pub fn import_edge_csv(bytes: &[u8]) -> Result<Self> {
        let text = String::from_utf8_lossy(bytes);
        let mut graph = Self::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Report(format!("bad edge row {line:?}")));
            }
            let from = DomainName::parse(fields[0])?;
            if fields[1].is_empty() {
                graph.add_node(from);
                continue;
            }
            let to = DomainName::parse(fields[1])?;
            let weight: u64 =
                fields[2].parse().map_err(|_| Error::Report(format!("bad weight in {line:?}")))?;
            graph.nodes.insert(from.clone());
            graph.nodes.insert(to.clone());
            let sources = graph.edges.entry((from.clone(), to)).or_default();
            for k in 0..weight {
                sources.insert(format!("import://{from}/{k}"));
            }
        }
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::testnet::{test_profile, ScriptNet, CONTROL_ADDR, FAKE_ADDR, MEASUREMENT_ADDR};
    use crate::check::{check_domain, CheckConfig};
    use crate::net::DnsOutcome;
    use crate::psl::parse_psl;

    fn rules() -> SuffixRuleSet {
        parse_psl("test\ncom\n").unwrap()
    }

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    fn verdict_map(entries: &[(&str, bool)]) -> HashMap<DomainName, FilterVerdict> {
        // Build genuine verdicts through check_domain against a scripted net.
        let profile = test_profile("CN");
        let cfg = CheckConfig::default();
        let mut map = HashMap::new();
        for (name, filtered) in entries {
            let mut net = ScriptNet::default();
            if *filtered {
                net.script_dns(name, FAKE_ADDR, DnsOutcome::answered(vec!["1.2.3.4".parse().unwrap()], 1));
            } else {
                let addr = "198.51.100.9";
                net.script_dns(name, MEASUREMENT_ADDR, DnsOutcome::answered(vec![addr.parse().unwrap()], 1));
                net.script_dns(name, CONTROL_ADDR, DnsOutcome::answered(vec![addr.parse().unwrap()], 1));
            }
            let domain = DomainName::parse(name).unwrap();
            map.insert(domain.clone(), check_domain(&net, &domain, &profile, &cfg));
        }
        map
    }

    #[test]
    fn records_edges_between_filtered_domains_only() {
        let verdicts = verdict_map(&[("f1.test", true), ("f2.test", true), ("u1.test", false)]);
        let mut graph = FilteredGraph::new();
        let edge = graph
            .record_link(&url("http://f1.test/page"), &url("http://f2.test/"), &verdicts, &rules())
            .unwrap();
        assert_eq!(edge.unwrap().weight, 1);
        let none = graph
            .record_link(&url("http://f1.test/page"), &url("http://u1.test/"), &verdicts, &rules())
            .unwrap();
        assert!(none.is_none());
        assert_eq!(graph.edge_count(), 1);
    }

    #[test]
    fn weight_counts_distinct_source_urls() {
        let verdicts = verdict_map(&[("f1.test", true), ("f2.test", true)]);
        let mut graph = FilteredGraph::new();
        let r = &rules();
        // Same page linking twice: weight stays 1.
        graph.record_link(&url("http://f1.test/a"), &url("http://f2.test/x"), &verdicts, r).unwrap();
        let edge = graph
            .record_link(&url("http://f1.test/a"), &url("http://f2.test/y"), &verdicts, r)
            .unwrap()
            .unwrap();
        assert_eq!(edge.weight, 1);
        // A different source page bumps it.
        let edge = graph
            .record_link(&url("http://f1.test/b"), &url("http://f2.test/x"), &verdicts, r)
            .unwrap()
            .unwrap();
        assert_eq!(edge.weight, 2);
    }

    #[test]
    fn self_links_and_missing_verdicts_are_rejected() {
        let verdicts = verdict_map(&[("f1.test", true), ("www.f1.test", true)]);
        let mut graph = FilteredGraph::new();
        let r = &rules();
        // Same registrable domain: no edge.
        let edge =
            graph.record_link(&url("http://f1.test/"), &url("http://www.f1.test/"), &verdicts, r).unwrap();
        assert!(edge.is_none());
        // Unknown domain: error.
        assert!(graph
            .record_link(&url("http://f1.test/"), &url("http://mystery.test/"), &verdicts, r)
            .is_err());
    }

    #[test]
    fn star_graph_degree_counts() {
        let mut names = vec![("hub.test", true)];
        let leaves: Vec<String> = (0..5).map(|i| format!("leaf{i}.test")).collect();
        for leaf in &leaves {
            names.push((leaf.as_str(), true));
        }
        let verdicts = verdict_map(&names);
        let mut graph = FilteredGraph::new();
        for leaf in &leaves {
            graph
                .record_link(&url(&format!("http://{leaf}/")), &url("http://hub.test/"), &verdicts, &rules())
                .unwrap();
        }
        let hub = DomainName::parse("hub.test").unwrap();
        assert_eq!(graph.backlink_counts()[&hub], 5);
        assert_eq!(graph.forward_counts()[&hub], 0);
        for leaf in &leaves {
            let d = DomainName::parse(leaf).unwrap();
            assert_eq!(graph.forward_counts()[&d], 1);
        }
    }

    #[test]
    fn empty_graph_yields_empty_maps() {
        let graph = FilteredGraph::new();
        assert!(graph.backlink_counts().is_empty());
        assert!(graph.forward_counts().is_empty());
        assert!(graph.top_n(Direction::Backlinks, 3, &|_| false).is_empty());
    }

    #[test]
    fn top_n_truncation_exclusion_and_ties() {
        let verdicts = verdict_map(&[("a.test", true), ("b.test", true), ("c.test", true)]);
        let mut graph = FilteredGraph::new();
        let r = &rules();
        graph.record_link(&url("http://c.test/"), &url("http://a.test/"), &verdicts, r).unwrap();
        graph.record_link(&url("http://a.test/"), &url("http://b.test/"), &verdicts, r).unwrap();
        // a and b both have 1 backlink: tie broken lexicographically.
        let top = graph.top_n(Direction::Backlinks, 3, &|_| false);
        assert_eq!(top[0].0.as_str(), "a.test");
        assert_eq!(top[1].0.as_str(), "b.test");
        // n smaller than node count truncates.
        assert_eq!(graph.top_n(Direction::Backlinks, 1, &|_| false).len(), 1);
        // Excluding the top node promotes the remainder.
        let excluded = graph.top_n(Direction::Backlinks, 3, &|d| d.as_str() == "a.test");
        assert_eq!(excluded[0].0.as_str(), "b.test");
    }

    #[test]
    fn edge_csv_round_trip() {
        let verdicts = verdict_map(&[("a.test", true), ("b.test", true)]);
        let mut graph = FilteredGraph::new();
        graph.record_link(&url("http://a.test/1"), &url("http://b.test/"), &verdicts, &rules()).unwrap();
        graph.record_link(&url("http://a.test/2"), &url("http://b.test/"), &verdicts, &rules()).unwrap();
        graph.add_node(DomainName::parse("lonely.test").unwrap());

        let csv = graph.export(ExportFormat::EdgeCsv).unwrap();
        let text = String::from_utf8(csv.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "from_domain,to_domain,weight");
        assert!(text.contains("a.test,b.test,2"));

        let back = FilteredGraph::import_edge_csv(&csv).unwrap();
        assert_eq!(back.node_count(), graph.node_count());
        let edges_a: Vec<_> = graph.edges().collect();
        let edges_b: Vec<_> = back.edges().collect();
        assert_eq!(edges_a, edges_b);
    }

    #[test]
    fn adjacency_json_shape() {
        let verdicts = verdict_map(&[("a.test", true), ("b.test", true)]);
        let mut graph = FilteredGraph::new();
        graph.record_link(&url("http://a.test/"), &url("http://b.test/"), &verdicts, &rules()).unwrap();
        let json = graph.export(ExportFormat::AdjacencyJson).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(value["a.test"]["out"][0]["domain"], "b.test");
        assert_eq!(value["a.test"]["out"][0]["weight"], 1);
        assert_eq!(value["b.test"]["in"][0], "a.test");
    }
}
