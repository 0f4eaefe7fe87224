//! Operator command line: batch filter checks, recursive crawls, suffix
//! enumeration, report generation and world-file tooling.

mod config;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use filtercrawl_core::check::{check_batch, CheckConfig, VerdictRecord};
use filtercrawl_core::crawler::{self, CrawlOutcome, CrawlSnapshot};
use filtercrawl_core::domain::DomainName;
use filtercrawl_core::enrich::{CategoryCache, CategoryProvider, GeoDb, LocalCategoryTable};
use filtercrawl_core::eventlog::{read_events, JsonlSink};
use filtercrawl_core::linkgraph::{Direction, ExportFormat, FilteredGraph};
use filtercrawl_core::net::{LiveNetwork, Network};
use filtercrawl_core::profile::ResolverProfile;
use filtercrawl_core::psl::{self, EnumerateOptions, SuffixRuleSet};
use filtercrawl_core::report::{
    self, emit, ExclusionList, Report, ReportFormat as CoreReportFormat,
};
use filtercrawl_core::simnet::{self, GeneratorConfig, SimHandle};
use filtercrawl_core::urls::normalize_url;

use config::{FileConfig, Overrides};

/// Fallback suffix rules when no list file is supplied. Enough for
/// self-reference collapsing on common hosts; enumeration should always
/// run with the full published list.
const DEFAULT_PSL: &str = include_str!("../data/default_psl.dat");

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORTED_WITH_SNAPSHOT: u8 = 3;

#[derive(Parser)]
#[command(name = "filtercrawl", version, about = "Discover DNS-filtered domains by crawling links between blocked sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the filtering check over a file of domains, one per line.
    Check(CheckArgs),
    /// Crawl outward from seed URLs, confirming filter status as it goes.
    Crawl(CrawlArgs),
    /// Probe alternative-suffix spellings of known filtered domains.
    Enumerate(EnumerateArgs),
    /// Derive analysis tables from a crawl event log.
    Report(ReportArgs),
    /// Generate a random simulated-world document.
    GenWorld(GenWorldArgs),
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Resolver profile JSON (live measurement).
    #[arg(long, conflicts_with = "world")]
    profile: Option<PathBuf>,
    /// Simulated world JSON (offline run against the built-in network).
    #[arg(long)]
    world: Option<PathBuf>,
    /// Country code for verdict records when running a simulated world.
    #[arg(long)]
    country: Option<String>,
    /// TOML config file; command-line flags win over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Content-length divergence threshold (0,1].
    #[arg(long)]
    maxdiff: Option<f64>,
    /// Per-exchange timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Exact-pseudocode mode for the check.
    #[arg(long)]
    strict_alg1: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    net: NetArgs,
    /// File of domains to check, one per line.
    #[arg(long)]
    domains_file: PathBuf,
    /// Concurrent probes.
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    /// Output JSONL path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrawlArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Seed list CSV (URL in the first column).
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Public suffix list file.
    #[arg(long)]
    psl: Option<PathBuf>,
    /// Output directory for events.jsonl, snapshot.json and graph exports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Resume from a snapshot produced by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    per_host_delay_ms: Option<u64>,
    /// Stop after this many page fetches (still resumable).
    #[arg(long)]
    max_pages: Option<u64>,
    /// Stop after this many seconds of wall clock.
    #[arg(long)]
    deadline_secs: Option<u64>,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    net: NetArgs,
    /// File of filtered domains to enumerate, one per line.
    #[arg(long)]
    domains_file: PathBuf,
    /// Public suffix list file (required; enumeration is list-sized).
    #[arg(long)]
    psl: PathBuf,
    /// Drop the PRIVATE DOMAINS section of the list.
    #[arg(long)]
    icann_only: bool,
    /// Probe wildcard-derived candidates too.
    #[arg(long)]
    include_synthetic: bool,
    /// Probes per second.
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    /// Output CSV path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Crawl event log (JSONL).
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Exclusion list: one registrable domain per line.
    #[arg(long)]
    exclusions: Option<PathBuf>,
    /// Baseline seed CSV (for `compare`).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Category table CSV (for `category` and category exclusions).
    #[arg(long)]
    category_table: Option<PathBuf>,
    /// Remote category API endpoint as ip:port; reads FILTERCRAWL_API_KEY.
    #[arg(long, conflicts_with = "category_table")]
    category_api: Option<String>,
    /// Exclude domains carrying this category label before ranking.
    #[arg(long)]
    exclude_category: Option<String>,
    /// Geo database: range CSV or binary .mmdb (for `host-country`).
    #[arg(long)]
    geo_db: Option<PathBuf>,
    /// Public suffix list for registrable-domain grouping.
    #[arg(long)]
    psl: Option<PathBuf>,
    /// Ranking length for top-* kinds.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Summary,
    Compare,
    Category,
    HostCountry,
    TopBacklinks,
    TopForward,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long, default_value_t = 50)]
    domains: usize,
    #[arg(long = "filtered-frac", default_value_t = 0.3)]
    filtered_frac: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    clique: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Crawl(args) => cmd_crawl(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::Report(args) => cmd_report(args),
        Command::GenWorld(args) => cmd_gen_world(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

/// Live or simulated backend, resolved from flags and config.
struct Backend {
    network: Arc<dyn Network>,
    profile: ResolverProfile,
    /// Seed URLs declared by the world document, when simulating.
    world_seeds: Vec<String>,
    // Keeps the simulated servers alive for the duration of the command.
    _sim: Option<SimHandle>,
}

fn backend(net: &NetArgs, file_cfg: &FileConfig) -> anyhow::Result<Backend> {
    let world_path = net.world.clone().or_else(|| file_cfg.world_path.clone());
    let profile_path = net.profile.clone().or_else(|| file_cfg.profile_path.clone());
    let country = net.country.clone().or_else(|| file_cfg.country.clone());
    if let Some(path) = world_path {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let world = simnet::load_world(&text)?;
        let handle = simnet::serve(&world)?;
        let profile = handle.profile(country.as_deref().unwrap_or("XX"));
        return Ok(Backend {
            network: handle.network(),
            profile,
            world_seeds: world.seeds.clone(),
            _sim: Some(handle),
        });
    }
    let Some(path) = profile_path else {
        bail!("one of --profile or --world is required");
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let profile = ResolverProfile::from_json(&text)?;
    Ok(Backend { network: Arc::new(LiveNetwork::new()), profile, world_seeds: Vec::new(), _sim: None })
}

fn check_config(net: &NetArgs, file_cfg: &FileConfig) -> anyhow::Result<CheckConfig> {
    let mut cfg = file_cfg.check_config();
    Overrides { maxdiff: net.maxdiff, timeout: net.timeout, strict_alg1: net.strict_alg1 }.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn load_rules(path: Option<&Path>, file_cfg: &FileConfig) -> anyhow::Result<SuffixRuleSet> {
    let path = path.map(Path::to_path_buf).or_else(|| file_cfg.psl_path.clone());
    match path {
        Some(path) => {
            let text =
                std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(psl::parse_psl(&text)?)
        }
        None => Ok(psl::parse_psl(DEFAULT_PSL).expect("embedded suffix list parses")),
    }
}

fn read_domain_lines(path: &Path) -> anyhow::Result<Vec<DomainName>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(DomainName::parse(line)?);
    }
    Ok(out)
}

fn out_writer(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    match path {
        Some(path) => Ok(Box::new(std::fs::File::create(path)?)),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn cmd_check(args: CheckArgs) -> anyhow::Result<u8> {
    let file_cfg = FileConfig::load(args.net.config.as_deref())?;
    let backend = backend(&args.net, &file_cfg)?;
    let cfg = check_config(&args.net, &file_cfg)?;
    let domains = read_domain_lines(&args.domains_file)?;
    let verdicts =
        check_batch(backend.network.as_ref(), &domains, &backend.profile, &cfg, args.parallelism.max(1));
    let mut out = out_writer(args.out.as_deref())?;
    for verdict in &verdicts {
        let record = VerdictRecord::new(verdict, &backend.profile.country);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_crawl(args: CrawlArgs) -> anyhow::Result<u8> {
    let file_cfg = FileConfig::load(args.net.config.as_deref())?;
    let backend = backend(&args.net, &file_cfg)?;
    let check_cfg = check_config(&args.net, &file_cfg)?;
    let rules = load_rules(args.psl.as_deref(), &file_cfg)?;

    let mut crawl_cfg = file_cfg.crawl_config();
    if let Some(v) = args.max_depth {
        crawl_cfg.max_depth = v;
    }
    if let Some(v) = args.parallelism {
        crawl_cfg.parallelism = v;
    }
    if let Some(v) = args.per_host_delay_ms {
        crawl_cfg.per_host_delay_ms = v;
    }
    if let Some(v) = args.max_pages {
        crawl_cfg.max_pages = Some(v);
    }
    if let Some(secs) = args.deadline_secs {
        crawl_cfg.deadline = Some(chrono::Utc::now() + chrono::Duration::seconds(secs as i64));
    }

    let out_dir = std::env::var_os("FILTERCRAWL_OUT_DIR")
        .map(PathBuf::from)
        .or(args.out_dir)
        .or(file_cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let events_path = out_dir.join("events.jsonl");
    let snapshot_path = out_dir.join("snapshot.json");

    let state = if let Some(snapshot_file) = &args.resume {
        let snapshot: CrawlSnapshot = serde_json::from_str(&std::fs::read_to_string(snapshot_file)?)?;
        let prior = if events_path.exists() { read_events(&events_path)? } else { Vec::new() };
        let sink = JsonlSink::append_to(&events_path)?;
        crawler::resume(
            backend.network.as_ref(),
            snapshot,
            &prior,
            &backend.profile,
            &check_cfg,
            &crawl_cfg,
            &rules,
            &sink,
        )?
    } else {
        let seeds = match args.seeds.clone().or_else(|| file_cfg.seed_path.clone()) {
            Some(seeds_path) => {
                let seeds = report::parse_seed_list(&std::fs::read_to_string(&seeds_path)?)?;
                if seeds.is_empty() {
                    bail!("seed list {} holds no URLs", seeds_path.display());
                }
                seeds
            }
            // A simulated world declares its own seeds.
            None if !backend.world_seeds.is_empty() => backend
                .world_seeds
                .iter()
                .map(|s| Ok(normalize_url(s, None)?))
                .collect::<anyhow::Result<Vec<_>>>()?,
            None => bail!("--seeds is required for a fresh crawl"),
        };
        let sink = JsonlSink::create(&events_path)?;
        crawler::crawl(
            backend.network.as_ref(),
            &seeds,
            &backend.profile,
            &check_cfg,
            &crawl_cfg,
            &rules,
            &sink,
        )?
    };

    std::fs::write(&snapshot_path, serde_json::to_string_pretty(&state.snapshot())?)?;
    std::fs::write(out_dir.join("graph.csv"), state.graph.export(ExportFormat::EdgeCsv)?)?;
    std::fs::write(out_dir.join("graph.json"), state.graph.export(ExportFormat::AdjacencyJson)?)?;

    println!(
        "{}: {} pages fetched, {} urls extracted, {} filtered urls, {} filtered domains ({:?})",
        state.country,
        state.stats.pages_fetched,
        state.stats.urls_extracted,
        state.stats.urls_filtered,
        state.stats.domains_filtered,
        state.outcome
    );
    for domain in &state.discovered {
        println!("filtered: {domain}");
    }

    if state.outcome == CrawlOutcome::ControlUnreachable {
        eprintln!("aborted: control resolver unreachable; snapshot at {}", snapshot_path.display());
        return Ok(EXIT_ABORTED_WITH_SNAPSHOT);
    }
    Ok(EXIT_OK)
}

fn cmd_enumerate(args: EnumerateArgs) -> anyhow::Result<u8> {
    let file_cfg = FileConfig::load(args.net.config.as_deref())?;
    let backend = backend(&args.net, &file_cfg)?;
    let cfg = check_config(&args.net, &file_cfg)?;
    let text = std::fs::read_to_string(&args.psl)?;
    let mut rules = psl::parse_psl(&text)?;
    if args.icann_only {
        rules = rules.icann_only()?;
    }
    let domains = read_domain_lines(&args.domains_file)?;
    let options = EnumerateOptions {
        include_synthetic: args.include_synthetic,
        parallelism: args.parallelism.max(1),
        rate_per_sec: (args.rate > 0.0).then_some(args.rate),
    };

    let mut out = out_writer(args.out.as_deref())?;
    writeln!(out, "candidate,status,reason,host_exists")?;
    for domain in &domains {
        let rows = match psl::enumerate_filtered(
            backend.network.as_ref(),
            domain,
            &rules,
            &backend.profile,
            &cfg,
            &options,
        ) {
            Ok(rows) => rows,
            Err(filtercrawl_core::error::Error::BareSuffix(name)) => {
                eprintln!("warning: {name} is a bare public suffix, skipped");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for row in rows {
            writeln!(
                out,
                "{},{},{},{}",
                row.candidate,
                serde_json::to_value(row.verdict.status)?.as_str().unwrap(),
                serde_json::to_value(row.verdict.reason)?.as_str().unwrap(),
                row.host_exists
            )?;
        }
    }
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<u8> {
    let file_cfg = FileConfig::load(args.net.config.as_deref())?;
    let events = read_events(&args.events)?;
    let exclusions = match &args.exclusions {
        Some(path) => ExclusionList::load(path)?,
        None => ExclusionList::empty(),
    };
    let rules = load_rules(args.psl.as_deref(), &file_cfg)?;
    let format = match args.format {
        OutputFormat::Csv => CoreReportFormat::Csv,
        OutputFormat::Json => CoreReportFormat::Json,
    };

    let filtered_domains = || -> BTreeSet<DomainName> {
        use filtercrawl_core::check::FilterStatus;
        use filtercrawl_core::eventlog::EventKind;
        events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Verdict { domain, status: FilterStatus::Filtered, .. } => Some(domain.clone()),
                _ => None,
            })
            .collect()
    };

    let report = match args.kind {
        ReportKind::Summary => Report::Summary(report::summarize(&events, &exclusions)?),
        ReportKind::Compare => {
            let backend = backend(&args.net, &file_cfg)?;
            let cfg = check_config(&args.net, &file_cfg)?;
            let baseline_path =
                args.baseline.as_ref().ok_or_else(|| anyhow::anyhow!("--baseline is required"))?;
            let baseline = std::fs::read_to_string(baseline_path)?;
            let row = report::compare(
                backend.network.as_ref(),
                &filtered_domains(),
                &baseline,
                &backend.profile,
                &cfg,
                &exclusions,
                8,
            )?;
            Report::Comparison(row)
        }
        ReportKind::Category => {
            let provider: Box<dyn CategoryProvider> = match (&args.category_table, &args.category_api) {
                (Some(table_path), None) => Box::new(LocalCategoryTable::load(table_path)?),
                (None, Some(endpoint)) => {
                    let addr: std::net::SocketAddrV4 =
                        endpoint.parse().context("--category-api must be ip:port")?;
                    Box::new(filtercrawl_core::enrich::HttpCategoryProvider {
                        address: *addr.ip(),
                        port: addr.port(),
                        host: endpoint.clone(),
                        api_key: std::env::var("FILTERCRAWL_API_KEY").ok(),
                        timeout: std::time::Duration::from_secs(10),
                    })
                }
                _ => bail!("one of --category-table or --category-api is required"),
            };
            let cache = CategoryCache::new(provider.as_ref());
            let rows = report::breakdown_categories(&filtered_domains(), &cache);
            for warning in cache.warnings() {
                eprintln!("warning: {warning}");
            }
            Report::Breakdown { dimension: "category".into(), rows }
        }
        ReportKind::HostCountry => {
            let backend = backend(&args.net, &file_cfg)?;
            let cfg = check_config(&args.net, &file_cfg)?;
            let db_path = args.geo_db.as_ref().ok_or_else(|| anyhow::anyhow!("--geo-db is required"))?;
            let db = GeoDb::load(db_path)?;
            let rows = report::breakdown_host_country(
                backend.network.as_ref(),
                &filtered_domains(),
                &backend.profile,
                &cfg,
                &db,
            );
            Report::Breakdown { dimension: "host_country".into(), rows }
        }
        ReportKind::TopBacklinks | ReportKind::TopForward => {
            let graph = FilteredGraph::from_events(&events, &rules)?;
            let direction = match args.kind {
                ReportKind::TopBacklinks => Direction::Backlinks,
                _ => Direction::Forward,
            };
            let category_excluded: Box<dyn Fn(&DomainName) -> bool> =
                match (&args.exclude_category, &args.category_table) {
                    (Some(label), Some(table_path)) => {
                        let table = LocalCategoryTable::load(table_path)?;
                        let label = label.clone();
                        Box::new(move |d: &DomainName| {
                            table.categorize(d).map(|ls| ls.iter().any(|l| l.name == label)).unwrap_or(false)
                        })
                    }
                    (Some(_), None) => bail!("--exclude-category needs --category-table"),
                    _ => Box::new(|_: &DomainName| false),
                };
            let rows = graph
                .top_n(direction, args.top.max(1), &|d| {
                    exclusions.is_excluded(d) || category_excluded(d)
                })
                .into_iter()
                .map(|(domain, count)| report::RankingRow { domain, count })
                .collect();
            let direction_name = match direction {
                Direction::Backlinks => "backlinks",
                Direction::Forward => "forward",
            };
            Report::Ranking { direction: direction_name.into(), rows }
        }
    };

    let mut out = out_writer(args.out.as_deref())?;
    emit(&report, format, &mut out)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_gen_world(args: GenWorldArgs) -> anyhow::Result<u8> {
    let config = GeneratorConfig {
        domains: args.domains,
        filtered_fraction: args.filtered_frac,
        seed: args.seed,
        cliques: args.clique,
        seed_urls: 2,
    };
    let world = simnet::generate_world(&config)?;
    let json = world.to_json()?;
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    eprintln!(
        "generated {} domains ({} filtered) with seed {}",
        world.domains.len(),
        world.domains.iter().filter(|d| d.filtered).count(),
        args.seed
    );
    Ok(EXIT_OK)
}
