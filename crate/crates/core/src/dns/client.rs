//! Blocking DNS resolution: A records over UDP with a single retry over
//! TCP when the response is truncated. No retries otherwise — callers
//! decide whether to re-queue a domain.

use std::io::{Read, Write};
use std::net::{SocketAddr, SocketAddrV4, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use crate::dns::wire::{self, AnswerData, RCODE_NXDOMAIN, RCODE_REFUSED, RCODE_SERVFAIL};
use crate::domain::DomainName;
use crate::net::DnsOutcome;

/// Resolve `domain` to its A records via the resolver at `server`.
pub fn resolve_a(domain: &DomainName, server: SocketAddrV4, timeout: Duration) -> DnsOutcome {
    let started = Instant::now();
    let id = rand::random::<u16>();
    let query = wire::encode_query(id, domain);

    let udp = match udp_exchange(&query, server, timeout) {
        Ok(Some(bytes)) => bytes,
        Ok(None) => return DnsOutcome::timeout(ms(started)),
        Err(e) => return DnsOutcome::error(format!("udp: {e}"), ms(started)),
    };

    let message = match wire::parse_message(&udp) {
        Ok(m) => m,
        Err(e) => return DnsOutcome::error(format!("malformed response: {e}"), ms(started)),
    };

    let message = if message.truncated {
        // Single retry over TCP, reusing whatever time is left.
        let remaining = timeout.saturating_sub(started.elapsed());
        match tcp_exchange(&query, server, remaining.max(Duration::from_millis(1))) {
            Ok(Some(bytes)) => match wire::parse_message(&bytes) {
                Ok(m) => m,
                Err(e) => return DnsOutcome::error(format!("malformed tcp response: {e}"), ms(started)),
            },
            Ok(None) => return DnsOutcome::timeout(ms(started)),
            Err(e) => return DnsOutcome::error(format!("tcp: {e}"), ms(started)),
        }
    } else {
        message
    };

    outcome_from_message(&message, id, started)
}

fn outcome_from_message(message: &wire::Message, expect_id: u16, started: Instant) -> DnsOutcome {
    if message.id != expect_id {
        return DnsOutcome::error("transaction id mismatch", ms(started));
    }
    if !message.is_response {
        return DnsOutcome::error("not a response", ms(started));
    }
    match message.rcode {
        wire::RCODE_NOERROR => {}
        RCODE_NXDOMAIN => return DnsOutcome::nxdomain(ms(started)),
        RCODE_SERVFAIL => return DnsOutcome::error("servfail", ms(started)),
        RCODE_REFUSED => return DnsOutcome::error("refused", ms(started)),
        other => return DnsOutcome::error(format!("rcode {other}"), ms(started)),
    }
    let addresses: Vec<_> = message
        .answers
        .iter()
        .filter_map(|a| match a.data {
            AnswerData::A(ip) => Some(ip),
            _ => None,
        })
        .collect();
    if addresses.is_empty() {
        // NOERROR with no A records (e.g. CNAME chain ending off-zone).
        return DnsOutcome::error("no A records in answer", ms(started));
    }
    DnsOutcome::answered(addresses, ms(started))
}

fn udp_exchange(query: &[u8], server: SocketAddrV4, timeout: Duration) -> std::io::Result<Option<Vec<u8>>> {
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
    socket.send_to(query, SocketAddr::V4(server))?;
    let deadline = Instant::now() + timeout;
    let mut buf = [0u8; 4096];
    loop {
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                // Ignore datagrams from unexpected peers.
                if from != SocketAddr::V4(server) {
                    if Instant::now() >= deadline {
                        return Ok(None);
                    }
                    continue;
                }
                return Ok(Some(buf[..n].to_vec()));
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                return Ok(None)
            }
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                // ICMP port unreachable; the host exists but no resolver does.
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
}

fn tcp_exchange(query: &[u8], server: SocketAddrV4, timeout: Duration) -> std::io::Result<Option<Vec<u8>>> {
    let mut stream = match TcpStream::connect_timeout(&SocketAddr::V4(server), timeout) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::TimedOut => return Ok(None),
        Err(e) => return Err(e),
    };
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let mut framed = Vec::with_capacity(query.len() + 2);
    framed.extend_from_slice(&(query.len() as u16).to_be_bytes());
    framed.extend_from_slice(query);
    stream.write_all(&framed)?;
    let mut len_buf = [0u8; 2];
    if let Err(e) = stream.read_exact(&mut len_buf) {
        return if timed_out(&e) { Ok(None) } else { Err(e) };
    }
    let len = u16::from_be_bytes(len_buf) as usize;
    let mut body = vec![0u8; len];
    if let Err(e) = stream.read_exact(&mut body) {
        return if timed_out(&e) { Ok(None) } else { Err(e) };
    }
    Ok(Some(body))
}

fn timed_out(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

fn ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns::wire::{encode_response, parse_message};
    use crate::net::DnsOutcomeKind;
    use std::net::Ipv4Addr;
    use std::thread;

    fn domain(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    /// One-shot UDP resolver fixture driven by a response function.
    fn spawn_udp_server<F>(respond: F) -> SocketAddrV4
    where
        F: Fn(&wire::Message) -> Option<Vec<u8>> + Send + 'static,
    {
        let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = match socket.local_addr().unwrap() {
            SocketAddr::V4(a) => a,
            _ => unreachable!(),
        };
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            if let Ok((n, from)) = socket.recv_from(&mut buf) {
                let query = parse_message(&buf[..n]).unwrap();
                if let Some(reply) = respond(&query) {
                    let _ = socket.send_to(&reply, from);
                }
            }
        });
        addr
    }

    #[test]
    fn answered_with_a_records() {
        let addr = spawn_udp_server(|q| {
            Some(encode_response(
                q,
                wire::RCODE_NOERROR,
                &[(q.questions[0].name.clone(), AnswerData::A(Ipv4Addr::new(192, 0, 2, 8)))],
                false,
            ))
        });
        let out = resolve_a(&domain("answered.test"), addr, Duration::from_secs(2));
        assert_eq!(out.kind, DnsOutcomeKind::Answered);
        assert_eq!(out.addresses, vec![Ipv4Addr::new(192, 0, 2, 8)]);
    }

    #[test]
    fn nxdomain_mapped() {
        let addr = spawn_udp_server(|q| Some(encode_response(q, RCODE_NXDOMAIN, &[], false)));
        let out = resolve_a(&domain("missing.test"), addr, Duration::from_secs(2));
        assert_eq!(out.kind, DnsOutcomeKind::Nxdomain);
    }

    #[test]
    fn silence_is_timeout() {
        let addr = spawn_udp_server(|_| None);
        let out = resolve_a(&domain("silent.test"), addr, Duration::from_millis(80));
        assert_eq!(out.kind, DnsOutcomeKind::Timeout);
        assert!(out.latency_ms >= 80);
    }

    #[test]
    fn refused_is_error() {
        let addr = spawn_udp_server(|q| Some(encode_response(q, RCODE_REFUSED, &[], false)));
        let out = resolve_a(&domain("refused.test"), addr, Duration::from_secs(2));
        assert_eq!(out.kind, DnsOutcomeKind::Error);
        assert_eq!(out.detail.as_deref(), Some("refused"));
    }

    #[test]
    fn truncation_retries_over_tcp() {
        // UDP side answers with TC set; TCP side serves the real answer.
        let tcp = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = tcp.local_addr().unwrap().port();
        thread::spawn(move || {
            if let Ok((mut stream, _)) = tcp.accept() {
                let mut len_buf = [0u8; 2];
                stream.read_exact(&mut len_buf).unwrap();
                let mut q = vec![0u8; u16::from_be_bytes(len_buf) as usize];
                stream.read_exact(&mut q).unwrap();
                let query = parse_message(&q).unwrap();
                let resp = encode_response(
                    &query,
                    wire::RCODE_NOERROR,
                    &[(query.questions[0].name.clone(), AnswerData::A(Ipv4Addr::new(203, 0, 113, 77)))],
                    false,
                );
                let mut framed = Vec::new();
                framed.extend_from_slice(&(resp.len() as u16).to_be_bytes());
                framed.extend_from_slice(&resp);
                stream.write_all(&framed).unwrap();
            }
        });

        let udp = UdpSocket::bind(("127.0.0.1", port));
        // Reuse the same port for UDP so the client's TCP retry hits our
        // listener. If the OS refuses, fall back to skipping silently.
        let udp = match udp {
            Ok(s) => s,
            Err(_) => return,
        };
        let addr = match udp.local_addr().unwrap() {
            SocketAddr::V4(a) => a,
            _ => unreachable!(),
        };
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            if let Ok((n, from)) = udp.recv_from(&mut buf) {
                let query = parse_message(&buf[..n]).unwrap();
                let reply = encode_response(&query, wire::RCODE_NOERROR, &[], true);
                let _ = udp.send_to(&reply, from);
            }
        });

        let out = resolve_a(&domain("big.test"), addr, Duration::from_secs(2));
        assert_eq!(out.kind, DnsOutcomeKind::Answered);
        assert_eq!(out.addresses, vec![Ipv4Addr::new(203, 0, 113, 77)]);
    }

    #[test]
    fn noerror_without_a_records_is_error() {
        let addr = spawn_udp_server(|q| Some(encode_response(q, wire::RCODE_NOERROR, &[], false)));
        let out = resolve_a(&domain("empty.test"), addr, Duration::from_secs(2));
        assert_eq!(out.kind, DnsOutcomeKind::Error);
    }
}
