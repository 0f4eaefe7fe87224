//! Public Suffix List parsing, registrable-domain splitting, and suffix
//! enumeration of a domain across every listed suffix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::check::{check_batch_paced, CheckConfig, FilterVerdict};
use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::profile::ResolverProfile;

/// Placeholder label substituted for `*` when a wildcard rule is turned
/// into a concrete enumeration candidate.
const SYNTHETIC_LABEL: &str = "x";

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    /// Rule labels without the `*.`/`!` markers, punycoded, root-last.
    labels: Vec<String>,
    is_wildcard: bool,
    is_exception: bool,
    private: bool,
}

impl Rule {
    fn key(&self) -> String {
        self.labels.join(".")
    }
}

/// A parsed suffix rule set with list-format semantics: longest match
/// wins and exceptions beat wildcards.
#[derive(Debug, Clone)]
pub struct SuffixRuleSet {
    exact: BTreeMap<String, Rule>,
    wildcards: BTreeMap<String, Rule>,
    exceptions: BTreeMap<String, Rule>,
    pub source_date: Option<String>,
}

/// How a domain decomposes against the rule set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSplit {
    /// Labels left of the registrable domain; possibly empty.
    pub subdomain: Vec<String>,
    /// Public suffix plus one label.
    pub registrable: DomainName,
    /// The matched public suffix labels.
    pub suffix: Vec<String>,
}

impl DomainSplit {
    /// The single label that joins the suffix to form the registrable domain.
    pub fn head(&self) -> &str {
        self.registrable.as_str().split('.').next().unwrap()
    }

    /// Reassemble the original domain.
    pub fn join(&self) -> DomainName {
        let mut labels = self.subdomain.clone();
        labels.extend(self.registrable.labels().map(str::to_string));
        DomainName::from_labels(labels).expect("split parts came from a valid domain")
    }
}

/// Parse text in the published list format: one rule per line, `//`
/// comments, `*.` wildcards, `!` exceptions and the ICANN/PRIVATE section
/// markers.
pub fn parse_psl(text: &str) -> Result<SuffixRuleSet> {
    let mut set = SuffixRuleSet {
        exact: BTreeMap::new(),
        wildcards: BTreeMap::new(),
        exceptions: BTreeMap::new(),
        source_date: None,
    };
    let mut in_private = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix("//") {
            let comment = comment.trim();
            if comment.contains("BEGIN PRIVATE DOMAINS") {
                in_private = true;
            } else if comment.contains("END PRIVATE DOMAINS") {
                in_private = false;
            } else if let Some(version) = comment.strip_prefix("VERSION:") {
                set.source_date = Some(version.trim().to_string());
            }
            continue;
        }
        // Rules end at the first whitespace.
        let token = line.split_whitespace().next().unwrap();
        let (body, is_exception) = match token.strip_prefix('!') {
            Some(rest) => (rest, true),
            None => (token, false),
        };
        let (body, is_wildcard) = match body.strip_prefix("*.") {
            Some(rest) => (rest, true),
            None => (body, false),
        };
        if is_exception && is_wildcard {
            return Err(Error::Psl(format!("line {}: rule cannot be both exception and wildcard", lineno + 1)));
        }
        let name = DomainName::parse(body)
            .map_err(|e| Error::Psl(format!("line {}: bad rule {token:?}: {e}", lineno + 1)))?;
        let rule = Rule {
            labels: name.labels().map(str::to_string).collect(),
            is_wildcard,
            is_exception,
            private: in_private,
        };
        let bucket = if is_exception {
            &mut set.exceptions
        } else if is_wildcard {
            &mut set.wildcards
        } else {
            &mut set.exact
        };
        bucket.insert(rule.key(), rule);
    }

    if set.exact.is_empty() && set.wildcards.is_empty() {
        return Err(Error::Psl("no rules found".into()));
    }

    // An exception only makes sense as a carve-out of a wildcard.
    for exception in set.exceptions.values() {
        let parent = exception.labels[1..].join(".");
        if !set.wildcards.contains_key(&parent) {
            return Err(Error::Psl(format!(
                "exception rule !{} has no matching wildcard *.{parent}",
                exception.key()
            )));
        }
    }

    Ok(set)
}

impl SuffixRuleSet {
    /// A copy without the PRIVATE DOMAINS section.
    pub fn icann_only(&self) -> Result<Self> {
        let filter = |m: &BTreeMap<String, Rule>| {
            m.iter().filter(|(_, r)| !r.private).map(|(k, r)| (k.clone(), r.clone())).collect::<BTreeMap<_, _>>()
        };
        let set = Self {
            exact: filter(&self.exact),
            wildcards: filter(&self.wildcards),
            exceptions: filter(&self.exceptions),
            source_date: self.source_date.clone(),
        };
        if set.exact.is_empty() && set.wildcards.is_empty() {
            return Err(Error::Psl("no rules left after dropping the private section".into()));
        }
        Ok(set)
    }

    pub fn rule_count(&self) -> usize {
        self.exact.len() + self.wildcards.len() + self.exceptions.len()
    }

    /// Number of labels in the public suffix of `labels`, per the list
    /// algorithm: exceptions first, then the longest matching rule, then
    /// the implicit `*` rule.
    fn suffix_label_count(&self, labels: &[String]) -> usize {
        for start in 0..labels.len() {
            let key = labels[start..].join(".");
            if self.exceptions.contains_key(&key) {
                // The exception's effective suffix drops its first label.
                return labels.len() - start - 1;
            }
        }
        let mut best = 1; // implicit "*" rule
        for start in 0..labels.len() {
            let key = labels[start..].join(".");
            if self.exact.contains_key(&key) {
                best = best.max(labels.len() - start);
            }
        }
        // A wildcard *.base covers base plus one more label.
        for start in 1..labels.len() {
            let key = labels[start..].join(".");
            if self.wildcards.contains_key(&key) {
                best = best.max(labels.len() - start + 1);
            }
        }
        best
    }

    /// The public suffix of `domain` under this rule set.
    pub fn public_suffix(&self, domain: &DomainName) -> Vec<String> {
        let labels: Vec<String> = domain.labels().map(str::to_string).collect();
        let count = self.suffix_label_count(&labels);
        labels[labels.len() - count..].to_vec()
    }

    /// Enumeration suffixes: every exact rule plus one synthetic
    /// instantiation per wildcard. The bool marks synthetic entries.
    fn enumeration_suffixes(&self) -> Vec<(String, bool)> {
        let mut out: Vec<(String, bool)> = self.exact.keys().map(|k| (k.clone(), false)).collect();
        out.extend(self.wildcards.keys().map(|k| (format!("{SYNTHETIC_LABEL}.{k}"), true)));
        out
    }
}

/// Split `domain` into subdomain / registrable / suffix.
pub fn split_domain(domain: &DomainName, rules: &SuffixRuleSet) -> Result<DomainSplit> {
    let labels: Vec<String> = domain.labels().map(str::to_string).collect();
    let suffix_len = rules.suffix_label_count(&labels);
    if labels.len() <= suffix_len {
        return Err(Error::BareSuffix(domain.to_string()));
    }
    let registrable_start = labels.len() - suffix_len - 1;
    let registrable = DomainName::from_labels(&labels[registrable_start..])?;
    Ok(DomainSplit {
        subdomain: labels[..registrable_start].to_vec(),
        registrable,
        suffix: labels[labels.len() - suffix_len..].to_vec(),
    })
}

/// Convenience: the registrable domain of `domain`, or `None` when the
/// domain is itself a public suffix.
pub fn registrable_domain(domain: &DomainName, rules: &SuffixRuleSet) -> Option<DomainName> {
    split_domain(domain, rules).ok().map(|s| s.registrable)
}

/// A domain produced by suffix enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub domain: DomainName,
    /// True when the suffix came from a wildcard rule and contains a
    /// placeholder label; excluded from live probing by default.
    pub synthetic: bool,
}

/// All alternative-suffix spellings of `domain`: for every listed suffix
/// `s`, `head.s`, plus `subdomain.head.s` when a subdomain exists. The
/// original domain is excluded; results are deduplicated and sorted.
pub fn enumerate_candidates(domain: &DomainName, rules: &SuffixRuleSet) -> Result<Vec<Candidate>> {
    let split = split_domain(domain, rules)?;
    let head = split.head().to_string();
    let sub = split.subdomain.join(".");

    let mut out: BTreeMap<DomainName, bool> = BTreeMap::new();
    for (suffix, synthetic) in rules.enumeration_suffixes() {
        let mut names = vec![format!("{head}.{suffix}")];
        if !sub.is_empty() {
            names.push(format!("{sub}.{head}.{suffix}"));
        }
        for name in names {
            let Ok(candidate) = DomainName::parse(&name) else {
                continue; // e.g. exceeds length limits with this suffix
            };
            if candidate == *domain {
                continue;
            }
            // Prefer the non-synthetic marking if a name arises both ways.
            out.entry(candidate).and_modify(|s| *s &= synthetic).or_insert(synthetic);
        }
    }
    Ok(out.into_iter().map(|(domain, synthetic)| Candidate { domain, synthetic }).collect())
}

/// One probed enumeration candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumeratedDomain {
    pub candidate: DomainName,
    pub synthetic: bool,
    pub verdict: FilterVerdict,
    /// True when the control resolver still has records for the name.
    pub host_exists: bool,
}

#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    pub include_synthetic: bool,
    pub parallelism: usize,
    /// Probes per second; enumeration volume is rule-set-sized, so the
    /// default is deliberately conservative.
    pub rate_per_sec: Option<f64>,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        Self { include_synthetic: false, parallelism: 8, rate_per_sec: Some(10.0) }
    }
}

/// Enumerate `domain` across all suffixes and probe each candidate for
/// filtering, recording whether the control server still knows the host.
pub fn enumerate_filtered(
    network: &dyn Network,
    domain: &DomainName,
    rules: &SuffixRuleSet,
    profile: &ResolverProfile,
    config: &CheckConfig,
    options: &EnumerateOptions,
) -> Result<Vec<EnumeratedDomain>> {
    let candidates: Vec<Candidate> = enumerate_candidates(domain, rules)?
        .into_iter()
        .filter(|c| options.include_synthetic || !c.synthetic)
        .collect();
    let names: Vec<DomainName> = candidates.iter().map(|c| c.domain.clone()).collect();
    let verdicts =
        check_batch_paced(network, &names, profile, config, options.parallelism, options.rate_per_sec);

    let mut out = Vec::with_capacity(candidates.len());
    for (candidate, verdict) in candidates.into_iter().zip(verdicts) {
        // The check usually consulted the control resolver already; only
        // short-circuited verdicts need a dedicated existence probe.
        let host_exists = match verdict.control_answered() {
            Some(answered) => answered,
            None => network
                .resolve(&candidate.domain, &profile.control, config.timeout())
                .is_answered(),
        };
        out.push(EnumeratedDomain {
            candidate: candidate.domain,
            synthetic: candidate.synthetic,
            verdict,
            host_exists,
        });
    }
    Ok(out)
}
