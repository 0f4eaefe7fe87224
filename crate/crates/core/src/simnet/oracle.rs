//! Brute-force discovery oracle: a plain BFS over the world document,
//! reading the declared `filtered` flags directly. Shares nothing with
//! the crawler besides the documented link-filtering rules.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use url::Url;

use crate::domain::DomainName;
use crate::psl::{registrable_domain, SuffixRuleSet};
use crate::urls::{default_asset_extensions, is_self_reference, is_static_asset, normalize_url, url_domain};

use super::{WorldDomain, WorldSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    /// Filtered domains reachable from the seeds within the depth bound.
    pub discovered: BTreeSet<DomainName>,
    /// Registrable-domain pairs linked from fetched pages, both filtered.
    pub edges: BTreeSet<(DomainName, DomainName)>,
}

/// BFS from the seeds, walking only pages on filtered domains, collecting
/// the filtered domains whose URLs would be enqueued at depth <= max_depth.
pub fn oracle_discover(world: &WorldSpec, rules: &SuffixRuleSet, max_depth: u32) -> OracleResult {
    let meta: HashMap<&DomainName, &WorldDomain> = world.domains.iter().map(|d| (&d.name, d)).collect();
    let assets = default_asset_extensions();

    let mut discovered: BTreeSet<DomainName> = BTreeSet::new();
    let mut edges: BTreeSet<(DomainName, DomainName)> = BTreeSet::new();
    let mut visited: HashSet<String> = HashSet::new();
    let mut queue: VecDeque<(Url, u32)> = VecDeque::new();

    for seed in &world.seeds {
        let Ok(url) = normalize_url(seed, None) else { continue };
        let host = url_domain(&url).expect("normalized urls have domain hosts");
        let Some(domain) = meta.get(&host) else { continue };
        if !domain.filtered {
            continue; // unfiltered seeds are dropped at verification
        }
        if visited.insert(url.as_str().to_string()) {
            discovered.insert(host);
            queue.push_back((url, 0));
        }
    }

    while let Some((url, depth)) = queue.pop_front() {
        let host = url_domain(&url).expect("normalized urls have domain hosts");
        let domain = meta[&host];
        if !domain.exists || domain.http_dead {
            continue; // page unreachable from the uncensored vantage
        }
        let Some(page) = domain.pages.iter().find(|p| p.path == url.path()) else {
            continue; // 404 body carries no links
        };

        let mut seen_in_page: HashSet<String> = HashSet::new();
        for raw in &page.links {
            let Ok(link) = normalize_url(raw, Some(&url)) else { continue };
            if !seen_in_page.insert(link.as_str().to_string()) {
                continue;
            }
            if is_static_asset(&link, &assets) || is_self_reference(&link, &host, rules) {
                continue;
            }
            let target = url_domain(&link).expect("normalized urls have domain hosts");
            let Some(target_meta) = meta.get(&target) else {
                continue; // external hosts check out indeterminate
            };
            if target_meta.filtered {
                // Edges form for every observed filtered-to-filtered link,
                // whether or not the target can still be enqueued.
                let from_reg = registrable_domain(&host, rules).unwrap_or_else(|| host.clone());
                let to_reg = registrable_domain(&target, rules).unwrap_or_else(|| target.clone());
                if from_reg != to_reg {
                    edges.insert((from_reg, to_reg));
                }
                if depth < max_depth && !visited.contains(link.as_str()) {
                    visited.insert(link.as_str().to_string());
                    discovered.insert(target);
                    queue.push_back((link, depth + 1));
                }
            }
        }
    }

    debug_assert!(discovered
        .iter()
        .all(|d| meta.get(d).map(|m| m.filtered).unwrap_or(false)));
    OracleResult { discovered, edges }
}
