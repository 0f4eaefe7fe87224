//! Seeded random world generator. Produces coherent worlds: every
//! domain's scripted behaviors lead the checker to the same conclusion
//! as its declared `filtered` flag.

use std::net::Ipv4Addr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::domain::DomainName;
use crate::error::Result;

use super::{
    expected_verdict, min_page_length, validate_world, FakeScript, MeasurementScript,
    ResolverBehaviors, WorldDomain, WorldPage, WorldSpec,
};
use crate::check::FilterStatus;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// Total domain count.
    pub domains: usize,
    /// Fraction of domains that are filtered.
    pub filtered_fraction: f64,
    /// PRNG seed; same config, same world.
    pub seed: u64,
    /// Number of tightly interlinked filtered groups to inject.
    pub cliques: usize,
    /// How many filtered domains seed the traversal.
    pub seed_urls: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { domains: 50, filtered_fraction: 0.3, seed: 1, cliques: 1, seed_urls: 2 }
    }
}

/// Public addresses that are never mapped to a server; poison targets.
fn dead_public(rng: &mut ChaCha8Rng) -> Ipv4Addr {
    Ipv4Addr::new(198, 18, 255, rng.gen_range(1..=254))
}

fn private_address(rng: &mut ChaCha8Rng) -> Ipv4Addr {
    Ipv4Addr::new(10, rng.gen_range(0..=255), rng.gen_range(0..=255), rng.gen_range(1..=254))
}

pub fn generate_world(config: &GeneratorConfig) -> Result<WorldSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.domains.max(2);
    let filtered_count = ((n as f64) * config.filtered_fraction.clamp(0.0, 1.0)).round().max(1.0) as usize;

    let names: Vec<DomainName> =
        (0..n).map(|i| DomainName::parse(&format!("d{i:03}.test")).unwrap()).collect();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let filtered_set: Vec<usize> = indices[..filtered_count.min(n)].to_vec();
    let is_filtered = {
        let mut v = vec![false; n];
        for &i in &filtered_set {
            v[i] = true;
        }
        v
    };

    // Seeds must be crawlable: filtered, resolvable and serving content.
    let seed_indices: Vec<usize> = filtered_set.iter().copied().take(config.seed_urls.max(1)).collect();

    // Script each filtered domain so the checker will agree with the flag.
    #[derive(Clone, Copy)]
    enum Flavor {
        Intercept,
        DnsTimeout,
        DnsLie,
        PoisonPrivate,
        PoisonDead,
        Blockpage,
        DeadButIntercepted, // exists=false, still on the blacklist
        HttpDeadIntercepted,
    }
    let mut flavor = vec![None::<Flavor>; n];
    for (k, &i) in filtered_set.iter().enumerate() {
        let f = if seed_indices.contains(&i) {
            // Keep seeds fetchable: DNS-level filtering only.
            [Flavor::Intercept, Flavor::DnsTimeout, Flavor::DnsLie, Flavor::PoisonPrivate][k % 4]
        } else {
            match rng.gen_range(0..10) {
                0 | 1 => Flavor::Intercept,
                2 | 3 => Flavor::DnsTimeout,
                4 => Flavor::DnsLie,
                5 => Flavor::PoisonPrivate,
                6 => Flavor::PoisonDead,
                7 | 8 => Flavor::Blockpage,
                _ => {
                    if rng.gen_bool(0.5) {
                        Flavor::DeadButIntercepted
                    } else {
                        Flavor::HttpDeadIntercepted
                    }
                }
            }
        };
        flavor[i] = Some(f);
    }

    // Pick clique members among filtered, fetchable domains.
    let fetchable_filtered: Vec<usize> = filtered_set
        .iter()
        .copied()
        .filter(|&i| {
            !matches!(flavor[i], Some(Flavor::DeadButIntercepted) | Some(Flavor::HttpDeadIntercepted))
        })
        .collect();
    let mut clique_links: Vec<Vec<usize>> = vec![Vec::new(); n];
    for _ in 0..config.cliques {
        if fetchable_filtered.len() < 3 {
            break;
        }
        let size = rng.gen_range(3..=fetchable_filtered.len().min(6));
        let mut members = fetchable_filtered.clone();
        members.shuffle(&mut rng);
        members.truncate(size);
        for &a in &members {
            for &b in &members {
                if a != b {
                    clique_links[a].push(b);
                }
            }
        }
    }

    let mut domains = Vec::with_capacity(n);
    for i in 0..n {
        let filtered = is_filtered[i];
        let f = flavor[i];
        let exists = !matches!(f, Some(Flavor::DeadButIntercepted)) && !(!filtered && rng.gen_bool(0.05));
        let http_dead = matches!(f, Some(Flavor::HttpDeadIntercepted));

        // Pages: root always, sometimes extra ones reachable only through
        // cross-domain links.
        let page_count = if exists && !http_dead { rng.gen_range(1..=3) } else { 0 };
        let mut pages = Vec::new();
        for p in 0..page_count {
            let path = if p == 0 { "/".to_string() } else { format!("/p{p}") };
            let mut links = Vec::new();
            // Links only matter on filtered pages (others are never read),
            // but decoy domains get some too for realism.
            let out_degree = rng.gen_range(1..=4);
            for _ in 0..out_degree {
                let target = if rng.gen_bool(0.65) && !filtered_set.is_empty() {
                    *filtered_set.choose(&mut rng).unwrap()
                } else {
                    rng.gen_range(0..n)
                };
                if target == i {
                    continue; // self-links get filtered out anyway
                }
                let target_page = rng.gen_range(0..3);
                let path = if target_page == 0 { "/".to_string() } else { format!("/p{target_page}") };
                links.push(format!("http://{}{}", names[target], path));
            }
            for &b in clique_links[i].iter().take(4) {
                links.push(format!("http://{}/", names[b]));
            }
            // Sprinkle ignorable links: assets, self references, externals.
            if rng.gen_bool(0.3) {
                links.push(format!("http://{}/style.css", names[(i + 1) % n]));
            }
            if rng.gen_bool(0.3) {
                links.push(format!("http://{}/other", names[i]));
            }
            if rng.gen_bool(0.2) {
                links.push("http://offsite.example/".to_string());
            }
            links.dedup();
            let min = min_page_length(&links);
            let body_length = min + 200 + rng.gen_range(0..400);
            pages.push(WorldPage { path, links, body_length });
        }

        let root_len = pages.first().map(|p| p.body_length).unwrap_or(0);
        let behaviors = match f {
            None => ResolverBehaviors::default(),
            Some(Flavor::Intercept) | Some(Flavor::DeadButIntercepted) | Some(Flavor::HttpDeadIntercepted) => {
                ResolverBehaviors {
                    measurement: MeasurementScript::Honest,
                    fake: FakeScript::Intercept { address: Ipv4Addr::new(1, 2, 3, rng.gen_range(1..=254)) },
                }
            }
            Some(Flavor::DnsTimeout) => {
                ResolverBehaviors { measurement: MeasurementScript::Timeout, fake: FakeScript::Silent }
            }
            Some(Flavor::DnsLie) => {
                ResolverBehaviors { measurement: MeasurementScript::Nxdomain, fake: FakeScript::Silent }
            }
            Some(Flavor::PoisonPrivate) => ResolverBehaviors {
                measurement: MeasurementScript::Poison { address: private_address(&mut rng) },
                fake: FakeScript::Silent,
            },
            Some(Flavor::PoisonDead) => ResolverBehaviors {
                measurement: MeasurementScript::Poison { address: dead_public(&mut rng) },
                fake: FakeScript::Silent,
            },
            Some(Flavor::Blockpage) => {
                // Quarter-length block page: divergence 0.75 > 0.5.
                let length = (root_len / 4).max(super::min_blockpage_length());
                ResolverBehaviors {
                    measurement: MeasurementScript::RedirectToBlockpage { length },
                    fake: FakeScript::Silent,
                }
            }
        };

        domains.push(WorldDomain {
            name: names[i].clone(),
            filtered,
            exists,
            http_dead,
            pages,
            resolver_behaviors: behaviors,
        });
    }

    // Seeds are chosen because they lead somewhere: guarantee each seed's
    // root page links a few filtered domains, then re-derive its length.
    for &i in &seed_indices {
        let targets: Vec<String> = (0..3)
            .filter_map(|_| {
                let &t = fetchable_filtered.choose(&mut rng)?;
                (t != i).then(|| format!("http://{}/", names[t]))
            })
            .collect();
        if let Some(page) = domains[i].pages.first_mut() {
            for target in targets {
                if !page.links.contains(&target) {
                    page.links.push(target);
                }
            }
            page.body_length = min_page_length(&page.links) + 200 + rng.gen_range(0..400);
        }
    }

    let world = WorldSpec {
        domains,
        seeds: seed_indices.iter().map(|&i| format!("http://{}/", names[i])).collect(),
        external: vec![DomainName::parse("offsite.example").unwrap()],
    };
    validate_world(&world)?;

    // Coherence: the checker must reach each domain's declared flag.
    for domain in &world.domains {
        let (status, _) = expected_verdict(&world, &domain.name, 0.5);
        debug_assert_eq!(
            status == FilterStatus::Filtered,
            domain.filtered,
            "incoherent generation for {}",
            domain.name
        );
    }
    Ok(world)
}
