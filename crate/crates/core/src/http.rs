//! Blocking HTTP/1.1 client used for both check fetches and crawl-page
//! fetches. Deliberately small: GET only, explicit target address (the
//! caller has already done DNS), optional TLS for https pages.

use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use url::Url;

use crate::domain::DomainName;
use crate::net::{FetchOutcome, PageFetch, PageFetchError};

const MAX_HEADER_BYTES: usize = 64 * 1024;

struct Response {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Response {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug)]
enum HttpError {
    ConnectTimeout,
    ReadTimeout,
    Connect(std::io::Error),
    Io(std::io::Error),
    Malformed(String),
    Tls(String),
}

/// Check-style fetch: GET "/" at `address:port`, Host set to `host`,
/// redirects never followed. Any parsed response is content.
pub fn get_check(
    address: Ipv4Addr,
    port: u16,
    host: &DomainName,
    timeout: Duration,
    max_body: u64,
) -> FetchOutcome {
    let started = Instant::now();
    let host_header = host_header(host.as_str(), port, false);
    match exchange(address, port, &host_header, "/", timeout, max_body, None) {
        Ok(resp) => FetchOutcome::content(resp.status, &resp.body, ms(started)),
        Err(HttpError::ConnectTimeout) | Err(HttpError::ReadTimeout) => FetchOutcome::timeout(ms(started)),
        Err(HttpError::Connect(e)) => FetchOutcome::error(format!("connect: {e}"), ms(started)),
        Err(HttpError::Io(e)) => FetchOutcome::error(format!("io: {e}"), ms(started)),
        Err(HttpError::Malformed(m)) => FetchOutcome::error(format!("malformed: {m}"), ms(started)),
        Err(HttpError::Tls(m)) => FetchOutcome::error(format!("tls: {m}"), ms(started)),
    }
}

/// Crawl-style fetch of `url`, with its host pinned to `address` and the
/// TCP connection made to `physical_port`. Follows redirects that stay on
/// the same host/scheme/port, up to `max_redirects` hops.
pub fn get_page(
    address: Ipv4Addr,
    physical_port: u16,
    url: &Url,
    timeout: Duration,
    max_body: u64,
    max_redirects: u32,
) -> Result<PageFetch, PageFetchError> {
    let started = Instant::now();
    let mut current = url.clone();
    let mut hops = 0;
    loop {
        let https = current.scheme() == "https";
        let host = current.host_str().ok_or_else(|| PageFetchError::Protocol("url has no host".into()))?.to_string();
        let explicit_port = current.port().is_some();
        let logical_port = current.port_or_known_default().unwrap_or(80);
        let host_hdr = if explicit_port && logical_port != default_port(https) {
            format!("{host}:{logical_port}")
        } else {
            host.clone()
        };
        let mut path = current.path().to_string();
        if let Some(q) = current.query() {
            path.push('?');
            path.push_str(q);
        }
        let tls_name = if https { Some(host.clone()) } else { None };
        let remaining = timeout.saturating_sub(started.elapsed());
        if remaining.is_zero() {
            return Err(PageFetchError::Timeout);
        }
        let resp = exchange(address, physical_port, &host_hdr, &path, remaining, max_body, tls_name.as_deref())
            .map_err(|e| match e {
                HttpError::ConnectTimeout | HttpError::ReadTimeout => PageFetchError::Timeout,
                HttpError::Connect(e) => PageFetchError::Connect(e.to_string()),
                HttpError::Io(e) => PageFetchError::Protocol(e.to_string()),
                HttpError::Malformed(m) => PageFetchError::Protocol(m),
                HttpError::Tls(m) => PageFetchError::Connect(format!("tls: {m}")),
            })?;

        let is_redirect = matches!(resp.status, 301 | 302 | 303 | 307 | 308);
        let location = resp.header("location").map(str::to_string);
        if is_redirect {
            if let Some(loc) = &location {
                if let Ok(next) = current.join(loc) {
                    let same_origin = next.scheme() == current.scheme()
                        && next.host_str() == current.host_str()
                        && next.port_or_known_default() == current.port_or_known_default();
                    if same_origin {
                        hops += 1;
                        if hops > max_redirects {
                            return Err(PageFetchError::TooManyRedirects);
                        }
                        current = next;
                        continue;
                    }
                }
            }
        }
        return Ok(PageFetch {
            final_url: current,
            status: resp.status,
            body: resp.body,
            location: if is_redirect { location } else { None },
            latency_ms: ms(started),
        });
    }
}

fn default_port(https: bool) -> u16 {
    if https {
        443
    } else {
        80
    }
}

fn host_header(host: &str, port: u16, https: bool) -> String {
    if port == default_port(https) {
        host.to_string()
    } else {
        format!("{host}:{port}")
    }
}

fn exchange(
    address: Ipv4Addr,
    port: u16,
    host_header: &str,
    path: &str,
    timeout: Duration,
    max_body: u64,
    tls_server_name: Option<&str>,
) -> Result<Response, HttpError> {
    let deadline = Instant::now() + timeout;
    let sockaddr = SocketAddr::V4(SocketAddrV4::new(address, port));
    let stream = TcpStream::connect_timeout(&sockaddr, timeout).map_err(|e|

        if e.kind() == std::io::ErrorKind::TimedOut { HttpError::ConnectTimeout } else { HttpError::Connect(e) })?;
    stream.set_nodelay(true).ok();
    stream
        .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
        .map_err(HttpError::Io)?;
    stream
        .set_write_timeout(Some(timeout.max(Duration::from_millis(1))))
        .map_err(HttpError::Io)?;

    let request = format!(
        "GET {path} HTTP/1.1\r\nHost: {host_header}\r\nUser-Agent: filtercrawl/0.1\r\nAccept: */*\r\nConnection: close\r\n\r\n"
    );

    match tls_server_name {
        None => {
            let mut stream = stream;
            stream.write_all(request.as_bytes()).map_err(map_io)?;
            read_response(&mut stream, deadline, max_body)
        }
        Some(name) => {
            let server_name = rustls::pki_types::ServerName::try_from(name.to_string())
                .map_err(|e| HttpError::Tls(e.to_string()))?;
            let conn = rustls::ClientConnection::new(tls_config(), server_name)
                .map_err(|e| HttpError::Tls(e.to_string()))?;
            let mut tls = rustls::StreamOwned::new(conn, stream);
            tls.write_all(request.as_bytes()).map_err(map_io)?;
            read_response(&mut tls, deadline, max_body)
        }
    }
}

fn tls_config() -> Arc<rustls::ClientConfig> {
    static CONFIG: std::sync::OnceLock<Arc<rustls::ClientConfig>> = std::sync::OnceLock::new();
    CONFIG
        .get_or_init(|| {
            let mut roots = rustls::RootCertStore::empty();
            roots.extend(webpki_roots::TLS_SERVER_ROOTS.iter().cloned());
            Arc::new(rustls::ClientConfig::builder().with_root_certificates(roots).with_no_client_auth())
        })
        .clone()
}

fn map_io(e: std::io::Error) -> HttpError {
    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) {
        HttpError::ReadTimeout
    } else {
        HttpError::Io(e)
    }
}

fn read_response<S: Read>(stream: &mut S, deadline: Instant, max_body: u64) -> Result<Response, HttpError> {
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_header_end(&buf) {
            break pos;
        }
        if buf.len() > MAX_HEADER_BYTES {
            return Err(HttpError::Malformed("header section too large".into()));
        }
        if Instant::now() > deadline {
            return Err(HttpError::ReadTimeout);
        }
        let n = stream.read(&mut chunk).map_err(map_io)?;
        if n == 0 {
            return Err(HttpError::Malformed("connection closed before headers".into()));
        }
        buf.extend_from_slice(&chunk[..n]);
    };

    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = header_text.split("\r\n");
    let status_line = lines.next().unwrap_or_default();
    let status = parse_status_line(status_line)?;
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(':').map(|(n, v)| (n.trim().to_string(), v.trim().to_string())))
        .collect();

    let mut body: Vec<u8> = buf[header_end + 4..].to_vec();
    let response = Response { status, headers, body: Vec::new() };

    let chunked = response
        .header("transfer-encoding")
        .map(|v| v.to_ascii_lowercase().contains("chunked"))
        .unwrap_or(false);
    let content_length = response.header("content-length").and_then(|v| v.parse::<u64>().ok());

    if chunked {
        read_until(stream, &mut body, deadline, max_body, |_| false)?;
        let decoded = decode_chunked(&body)?;
        return Ok(Response { body: truncate(decoded, max_body), ..response });
    }

    match content_length {
        Some(len) => {
            let want = len.min(max_body) as usize;
            read_until(stream, &mut body, deadline, max_body, |b| b.len() >= want)?;
            body.truncate(want);
        }
        None => {
            read_until(stream, &mut body, deadline, max_body, |_| false)?;
        }
    }
    Ok(Response { body: truncate(body, max_body), ..response })
}

fn read_until<S: Read>(
    stream: &mut S,
    buf: &mut Vec<u8>,
    deadline: Instant,
    max_body: u64,
    done: impl Fn(&[u8]) -> bool,
) -> Result<(), HttpError> {
    let mut chunk = [0u8; 8192];
    while !done(buf) && (buf.len() as u64) < max_body.saturating_add(1) {
        if Instant::now() > deadline {
            return Err(HttpError::ReadTimeout);
        }
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            // rustls surfaces a clean close as UnexpectedEof sometimes.
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(map_io(e)),
        }
    }
    Ok(())
}

fn truncate(mut body: Vec<u8>, max_body: u64) -> Vec<u8> {
    if body.len() as u64 > max_body {
        body.truncate(max_body as usize);
    }
    body
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn parse_status_line(line: &str) -> Result<u16, HttpError> {
    let mut parts = line.split_whitespace();
    let version = parts.next().unwrap_or_default();
    if !version.starts_with("HTTP/1.") {
        return Err(HttpError::Malformed(format!("bad status line {line:?}")));
    }
    parts
        .next()
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| HttpError::Malformed(format!("bad status line {line:?}")))
}

fn decode_chunked(raw: &[u8]) -> Result<Vec<u8>, HttpError> {
    let mut out = Vec::with_capacity(raw.len());
    let mut pos = 0;
    loop {
        let line_end = raw[pos..]
            .windows(2)
            .position(|w| w == b"\r\n")
            .ok_or_else(|| HttpError::Malformed("chunk size line missing".into()))?
            + pos;
        let size_text = String::from_utf8_lossy(&raw[pos..line_end]);
        let size = usize::from_str_radix(size_text.trim().split(';').next().unwrap_or("").trim(), 16)
            .map_err(|_| HttpError::Malformed(format!("bad chunk size {size_text:?}")))?;
        pos = line_end + 2;
        if size == 0 {
            return Ok(out);
        }
        if pos + size > raw.len() {
            return Err(HttpError::Malformed("chunk body truncated".into()));
        }
        out.extend_from_slice(&raw[pos..pos + size]);
        pos += size + 2; // skip trailing CRLF
        if pos > raw.len() {
            return Err(HttpError::Malformed("chunk terminator truncated".into()));
        }
    }
}

fn ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}
