//! TOML run configuration. Flags always win over file values; file
//! values win over defaults. Defaults follow the reference experiment
//! setup: control 8.8.8.8 (in the shipped profiles), maxdiff 0.5, 10 s
//! timeout, recursion depth 100.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use filtercrawl_core::check::CheckConfig;
use filtercrawl_core::crawler::CrawlConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub country: Option<String>,
    pub profile_path: Option<PathBuf>,
    pub world_path: Option<PathBuf>,
    pub seed_path: Option<PathBuf>,
    pub psl_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub crawl: CrawlSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub maxdiff: Option<f64>,
    pub timeout_secs: Option<f64>,
    pub http_port: Option<u16>,
    pub strict_alg1: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlSection {
    pub max_depth: Option<u32>,
    pub parallelism: Option<usize>,
    pub per_host_delay_ms: Option<u64>,
    pub max_page_bytes: Option<u64>,
    pub max_redirects: Option<u32>,
    pub max_pages: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
            }
            None => Ok(Self::default()),
        }
    }

    pub fn check_config(&self) -> CheckConfig {
        let mut cfg = CheckConfig::default();
        if let Some(v) = self.check.maxdiff {
            cfg.maxdiff = v;
        }
        if let Some(v) = self.check.timeout_secs {
            cfg.timeout_secs = v;
        }
        if let Some(v) = self.check.http_port {
            cfg.http_port = v;
        }
        if let Some(v) = self.check.strict_alg1 {
            cfg.strict_alg1 = v;
        }
        cfg
    }

    pub fn crawl_config(&self) -> CrawlConfig {
        let mut cfg = CrawlConfig::default();
        if let Some(v) = self.crawl.max_depth {
            cfg.max_depth = v;
        }
        if let Some(v) = self.crawl.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = self.crawl.per_host_delay_ms {
            cfg.per_host_delay_ms = v;
        }
        if let Some(v) = self.crawl.max_page_bytes {
            cfg.max_page_bytes = v;
        }
        if let Some(v) = self.crawl.max_redirects {
            cfg.max_redirects = v;
        }
        if let Some(v) = self.crawl.max_pages {
            cfg.max_pages = Some(v);
        }
        cfg
    }
}

/// Command-line check overrides, applied last.
pub struct Overrides {
    pub maxdiff: Option<f64>,
    pub timeout: Option<f64>,
    pub strict_alg1: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut CheckConfig) {
        if let Some(v) = self.maxdiff {
            cfg.maxdiff = v;
        }
        if let Some(v) = self.timeout {
            cfg.timeout_secs = v;
        }
        if self.strict_alg1 {
            cfg.strict_alg1 = true;
        }
    }
}
