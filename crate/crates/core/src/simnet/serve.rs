//! Realize a world as real loopback servers: one UDP resolver per role
//! and two HTTP servers (live sites and block pages). Domain names map to
//! virtual addresses from the documentation ranges; the simulated network
//! translates those to the loopback sockets.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use url::Url;

use crate::dns::wire;
use crate::domain::DomainName;
use crate::error::{Error, Result};
use crate::http;
use crate::net::{DnsOutcome, FetchOutcome, Network, PageFetch, PageFetchError, MAX_CHECK_BODY};
use crate::profile::{ResolverEndpoint, ResolverProfile, ResolverRole};

use super::{assign_addresses, render_blockpage, render_page, FakeScript, MeasurementScript, WorldSpec, NOT_FOUND_BODY};

/// Precomputed pure view of the world the server threads answer from.
struct WorldIndex {
    /// name -> (exists, measurement script, fake script)
    domains: HashMap<String, DomainEntry>,
    /// (host, path) -> rendered body
    pages: HashMap<(String, String), String>,
    /// host -> rendered block page
    blockpages: HashMap<String, String>,
}

struct DomainEntry {
    exists: bool,
    site_addr: Option<Ipv4Addr>,
    block_addr: Option<Ipv4Addr>,
    measurement: MeasurementScript,
    fake: FakeScript,
}

/// Translates virtual addresses to loopback sockets and otherwise reuses
/// the production DNS and HTTP clients. Unmapped addresses black-hole.
pub struct SimNetwork {
    vmap: HashMap<Ipv4Addr, SocketAddrV4>,
}

impl Network for SimNetwork {
    fn resolve(&self, domain: &DomainName, endpoint: &ResolverEndpoint, timeout: Duration) -> DnsOutcome {
        // Endpoints handed out by the handle are real loopback servers.
        crate::dns::client::resolve_a(domain, SocketAddrV4::new(endpoint.address, endpoint.port), timeout)
    }

    fn fetch_check(&self, address: Ipv4Addr, _port: u16, host: &DomainName, timeout: Duration) -> FetchOutcome {
        match self.vmap.get(&address) {
            Some(physical) => {
                http::get_check(*physical.ip(), physical.port(), host, timeout, MAX_CHECK_BODY)
            }
            None => FetchOutcome::timeout(timeout.as_millis() as u64),
        }
    }

    fn fetch_page(
        &self,
        address: Ipv4Addr,
        url: &Url,
        timeout: Duration,
        max_body: u64,
        max_redirects: u32,
    ) -> std::result::Result<PageFetch, PageFetchError> {
        match self.vmap.get(&address) {
            Some(physical) => {
                http::get_page(*physical.ip(), physical.port(), url, timeout, max_body, max_redirects)
            }
            None => Err(PageFetchError::Timeout),
        }
    }
}

/// A running simulated network. Dropping it stops every server thread.
pub struct SimHandle {
    network: Arc<SimNetwork>,
    control: SocketAddrV4,
    measurement: SocketAddrV4,
    fake: SocketAddrV4,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl SimHandle {
    pub fn network(&self) -> Arc<SimNetwork> {
        Arc::clone(&self.network)
    }

    /// A resolver profile whose endpoints are this simulation's servers.
    pub fn profile(&self, country: &str) -> ResolverProfile {
        ResolverProfile::new(
            country,
            ResolverEndpoint::new(*self.control.ip(), self.control.port(), ResolverRole::Control),
            vec![ResolverEndpoint::new(
                *self.measurement.ip(),
                self.measurement.port(),
                ResolverRole::Measurement,
            )],
            vec![ResolverEndpoint::new(*self.fake.ip(), self.fake.port(), ResolverRole::Fake)],
        )
        .expect("loopback endpoints form a valid profile")
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Start serving `world`. The world must already be validated.
pub fn serve(world: &WorldSpec) -> Result<SimHandle> {
    let (site_addrs, block_addrs) = assign_addresses(world);

    let mut index = WorldIndex {
        domains: HashMap::new(),
        pages: HashMap::new(),
        blockpages: HashMap::new(),
    };
    for domain in &world.domains {
        let name = domain.name.as_str().to_string();
        for page in &domain.pages {
            let body = render_page(&page.links, page.body_length)
                .map_err(|e| Error::World(format!("{}: {e}", domain.name)))?;
            index.pages.insert((name.clone(), page.path.clone()), body);
        }
        if let MeasurementScript::RedirectToBlockpage { length } = domain.resolver_behaviors.measurement {
            index.blockpages.insert(name.clone(), render_blockpage(length)?);
        }
        index.domains.insert(
            name,
            DomainEntry {
                exists: domain.exists,
                site_addr: site_addrs.get(&domain.name).copied(),
                block_addr: block_addrs.get(&domain.name).copied(),
                measurement: domain.resolver_behaviors.measurement.clone(),
                fake: domain.resolver_behaviors.fake.clone(),
            },
        );
    }
    let index = Arc::new(index);
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    // HTTP servers first so the address map is complete before DNS answers.
    let main_http = bind_tcp()?;
    let block_http = bind_tcp()?;
    let main_addr = local_v4(&main_http)?;
    let block_addr = local_v4(&block_http)?;
    threads.push(spawn_http(main_http, Arc::clone(&index), Arc::clone(&stop), false));
    threads.push(spawn_http(block_http, Arc::clone(&index), Arc::clone(&stop), true));

    let mut vmap = HashMap::new();
    for domain in &world.domains {
        if let Some(addr) = site_addrs.get(&domain.name) {
            if !domain.http_dead {
                vmap.insert(*addr, main_addr);
            }
        }
        if let Some(addr) = block_addrs.get(&domain.name) {
            vmap.insert(*addr, block_addr);
        }
    }

    let mut dns_addrs = Vec::new();
    for role in [ResolverRole::Control, ResolverRole::Measurement, ResolverRole::Fake] {
        let socket = UdpSocket::bind("127.0.0.1:0").map_err(|e| Error::SimStartup(e.to_string()))?;
        socket
            .set_read_timeout(Some(Duration::from_millis(20)))
            .map_err(|e| Error::SimStartup(e.to_string()))?;
        dns_addrs.push(local_udp_v4(&socket)?);
        threads.push(spawn_dns(socket, role, Arc::clone(&index), Arc::clone(&stop)));
    }

    Ok(SimHandle {
        network: Arc::new(SimNetwork { vmap }),
        control: dns_addrs[0],
        measurement: dns_addrs[1],
        fake: dns_addrs[2],
        stop,
        threads,
    })
}

fn bind_tcp() -> Result<TcpListener> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| Error::SimStartup(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| Error::SimStartup(e.to_string()))?;
    Ok(listener)
}

fn local_v4(listener: &TcpListener) -> Result<SocketAddrV4> {
    match listener.local_addr().map_err(|e| Error::SimStartup(e.to_string()))? {
        SocketAddr::V4(a) => Ok(a),
        _ => Err(Error::SimStartup("expected v4 listener".into())),
    }
}

fn local_udp_v4(socket: &UdpSocket) -> Result<SocketAddrV4> {
    match socket.local_addr().map_err(|e| Error::SimStartup(e.to_string()))? {
        SocketAddr::V4(a) => Ok(a),
        _ => Err(Error::SimStartup("expected v4 socket".into())),
    }
}

fn spawn_dns(
    socket: UdpSocket,
    role: ResolverRole,
    index: Arc<WorldIndex>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut buf = [0u8; 4096];
        while !stop.load(Ordering::SeqCst) {
            let (n, peer) = match socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e)
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    continue
                }
                Err(_) => continue,
            };
            let Ok(query) = wire::parse_message(&buf[..n]) else { continue };
            if query.questions.is_empty() {
                continue;
            }
            let qname = query.questions[0].name.clone();
            if let Some(reply) = dns_answer(&index, role, &qname, &query) {
                let _ = socket.send_to(&reply, peer);
            }
        }
    })
}

/// The scripted answer for one query, or None to stay silent.
fn dns_answer(
    index: &WorldIndex,
    role: ResolverRole,
    qname: &str,
    query: &wire::Message,
) -> Option<Vec<u8>> {
    let nxdomain = || Some(wire::encode_response(query, wire::RCODE_NXDOMAIN, &[], false));
    let answer = |addr: Ipv4Addr| {
        Some(wire::encode_response(
            query,
            wire::RCODE_NOERROR,
            &[(qname.to_string(), wire::AnswerData::A(addr))],
            false,
        ))
    };

    let entry = index.domains.get(qname);
    match role {
        ResolverRole::Control => match entry {
            Some(e) if e.exists => answer(e.site_addr.expect("existing domains have addresses")),
            _ => nxdomain(),
        },
        ResolverRole::Measurement => {
            let Some(e) = entry else { return nxdomain() };
            match &e.measurement {
                MeasurementScript::Honest => {
                    if e.exists {
                        answer(e.site_addr.expect("existing domains have addresses"))
                    } else {
                        nxdomain()
                    }
                }
                MeasurementScript::Timeout => None,
                MeasurementScript::Nxdomain => nxdomain(),
                MeasurementScript::Poison { address } => answer(*address),
                MeasurementScript::RedirectToBlockpage { .. } => {
                    answer(e.block_addr.expect("blockpage domains have block addresses"))
                }
            }
        }
        ResolverRole::Fake => {
            let script = entry.map(|e| &e.fake).unwrap_or(&FakeScript::Silent);
            match script {
                FakeScript::Silent => None,
                FakeScript::Intercept { address } => answer(*address),
            }
        }
    }
}

fn spawn_http(
    listener: TcpListener,
    index: Arc<WorldIndex>,
    stop: Arc<AtomicBool>,
    blockpage_server: bool,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let index = Arc::clone(&index);
                    std::thread::spawn(move || handle_http(stream, &index, blockpage_server));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(_) => break,
            }
        }
    })
}

fn handle_http(mut stream: TcpStream, index: &WorldIndex, blockpage_server: bool) {
    stream.set_nonblocking(false).ok();
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let Some((path, host)) = read_request(&mut stream) else { return };

    let found: Option<&str> = if blockpage_server {
        index.blockpages.get(&host).map(String::as_str)
    } else {
        index.pages.get(&(host, path)).map(String::as_str)
    };
    let (status, body) = match found {
        Some(body) => ("200 OK", body),
        None => ("404 Not Found", NOT_FOUND_BODY),
    };
    let header = format!(
        "HTTP/1.1 {status}\r\nContent-Type: text/html\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(header.as_bytes());
    let _ = stream.write_all(body.as_bytes());
    let _ = stream.flush();
}

/// Parse the request line and Host header; returns (path, host) with any
/// :port suffix stripped from the host.
fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut buf = Vec::with_capacity(1024);
    let mut chunk = [0u8; 1024];
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
        if buf.len() > 16 * 1024 {
            return None;
        }
        match stream.read(&mut chunk) {
            Ok(0) => return None,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => return None,
        }
    }
    let text = String::from_utf8_lossy(&buf);
    let mut lines = text.split("\r\n");
    let request_line = lines.next()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?;
    if method != "GET" {
        return None;
    }
    let target = parts.next()?.to_string();
    let path = target.split('?').next().unwrap_or("/").to_string();
    let host = lines
        .filter_map(|l| l.split_once(':').map(|(n, v)| (n.trim().to_ascii_lowercase(), v.trim().to_string())))
        .find(|(n, _)| n == "host")
        .map(|(_, v)| v.split(':').next().unwrap_or("").to_ascii_lowercase())?;
    Some((path, host))
}
