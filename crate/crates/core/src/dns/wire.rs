//! Minimal DNS wire codec: A/IN queries and the response shapes the
//! filtering checks need (answer addresses, NXDOMAIN, refusals, truncation).

use std::net::Ipv4Addr;

use crate::domain::DomainName;

pub const TYPE_A: u16 = 1;
pub const TYPE_CNAME: u16 = 5;
pub const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_REFUSED: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: u16,
    pub is_response: bool,
    pub rcode: u8,
    pub truncated: bool,
    pub recursion_desired: bool,
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub name: String,
    pub rtype: u16,
    pub ttl: u32,
    pub data: AnswerData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerData {
    A(Ipv4Addr),
    Cname(String),
    Other(Vec<u8>),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message too short")]
    Truncated,
    #[error("label length {0} exceeds 63")]
    LabelTooLong(usize),
    #[error("name exceeds 253 octets")]
    NameTooLong,
    #[error("compression pointer loop")]
    PointerLoop,
    #[error("malformed record data")]
    BadRdata,
}

/// Encode an A/IN query for `domain` with the given transaction id.
pub fn encode_query(id: u16, domain: &DomainName) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32);
    buf.extend_from_slice(&id.to_be_bytes());
    buf.extend_from_slice(&[0x01, 0x00]); // RD set, everything else clear
    buf.extend_from_slice(&1u16.to_be_bytes()); // QDCOUNT
    buf.extend_from_slice(&[0; 6]); // AN/NS/AR counts
    write_name(&mut buf, domain.as_str());
    buf.extend_from_slice(&TYPE_A.to_be_bytes());
    buf.extend_from_slice(&CLASS_IN.to_be_bytes());
    buf
}

/// Encode a response to a previously parsed query.
pub fn encode_response(
    query: &Message,
    rcode: u8,
    answers: &[(String, AnswerData)],
    truncated: bool,
) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12);
    buf.extend_from_slice(&query.id.to_be_bytes());
    let mut flags: u16 = 0x8000; // QR
    if query.recursion_desired {
        flags |= 0x0100; // RD echoed
    }
    flags |= 0x0080; // RA
    if truncated {
        flags |= 0x0200;
    }
    flags |= rcode as u16 & 0x000f;
    buf.extend_from_slice(&flags.to_be_bytes());
    buf.extend_from_slice(&(query.questions.len() as u16).to_be_bytes());
    buf.extend_from_slice(&(answers.len() as u16).to_be_bytes());
    buf.extend_from_slice(&[0; 4]);
    for q in &query.questions {
        write_name(&mut buf, &q.name);
        buf.extend_from_slice(&q.qtype.to_be_bytes());
        buf.extend_from_slice(&q.qclass.to_be_bytes());
    }
    for (name, data) in answers {
        write_name(&mut buf, name);
        let (rtype, rdata) = match data {
            AnswerData::A(addr) => (TYPE_A, addr.octets().to_vec()),
            AnswerData::Cname(target) => {
                let mut owned = Vec::new();
                write_name(&mut owned, target);
                (TYPE_CNAME, owned)
            }
            AnswerData::Other(bytes) => (0, bytes.clone()),
        };
        buf.extend_from_slice(&rtype.to_be_bytes());
        buf.extend_from_slice(&CLASS_IN.to_be_bytes());
        buf.extend_from_slice(&60u32.to_be_bytes());
        buf.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
        buf.extend_from_slice(&rdata);
    }
    buf
}

pub fn parse_message(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() < 12 {
        return Err(WireError::Truncated);
    }
    let id = u16::from_be_bytes([bytes[0], bytes[1]]);
    let flags = u16::from_be_bytes([bytes[2], bytes[3]]);
    let qdcount = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let ancount = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;

    let mut pos = 12;
    let mut questions = Vec::with_capacity(qdcount);
    for _ in 0..qdcount {
        let (name, next) = read_name(bytes, pos)?;
        if next + 4 > bytes.len() {
            return Err(WireError::Truncated);
        }
        questions.push(Question {
            name,
            qtype: u16::from_be_bytes([bytes[next], bytes[next + 1]]),
            qclass: u16::from_be_bytes([bytes[next + 2], bytes[next + 3]]),
        });
        pos = next + 4;
    }

    let mut answers = Vec::with_capacity(ancount);
    for _ in 0..ancount {
        let (name, next) = read_name(bytes, pos)?;
        if next + 10 > bytes.len() {
            return Err(WireError::Truncated);
        }
        let rtype = u16::from_be_bytes([bytes[next], bytes[next + 1]]);
        let ttl = u32::from_be_bytes([bytes[next + 4], bytes[next + 5], bytes[next + 6], bytes[next + 7]]);
        let rdlen = u16::from_be_bytes([bytes[next + 8], bytes[next + 9]]) as usize;
        let rdata_start = next + 10;
        if rdata_start + rdlen > bytes.len() {
            return Err(WireError::Truncated);
        }
        let rdata = &bytes[rdata_start..rdata_start + rdlen];
        let data = match rtype {
            TYPE_A => {
                if rdlen != 4 {
                    return Err(WireError::BadRdata);
                }
                AnswerData::A(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3]))
            }
            TYPE_CNAME => {
                let (target, _) = read_name(bytes, rdata_start)?;
                AnswerData::Cname(target)
            }
            _ => AnswerData::Other(rdata.to_vec()),
        };
        answers.push(Answer { name, rtype, ttl, data });
        pos = rdata_start + rdlen;
    }

    Ok(Message {
        id,
        is_response: flags & 0x8000 != 0,
        rcode: (flags & 0x000f) as u8,
        truncated: flags & 0x0200 != 0,
        recursion_desired: flags & 0x0100 != 0,
        questions,
        answers,
    })
}

fn write_name(buf: &mut Vec<u8>, name: &str) {
    for label in name.split('.').filter(|l| !l.is_empty()) {
        let bytes = label.as_bytes();
        debug_assert!(bytes.len() <= 63);
        buf.push(bytes.len() as u8);
        buf.extend_from_slice(bytes);
    }
    buf.push(0);
}

/// Read a possibly-compressed name starting at `pos`. Returns the name and
/// the offset just past it in the original (uncompressed) stream.
fn read_name(bytes: &[u8], mut pos: usize) -> Result<(String, usize), WireError> {
    let mut labels: Vec<String> = Vec::new();
    let mut jumped = false;
    let mut end = pos;
    let mut hops = 0;
    loop {
        let len = *bytes.get(pos).ok_or(WireError::Truncated)? as usize;
        if len & 0xc0 == 0xc0 {
            let b2 = *bytes.get(pos + 1).ok_or(WireError::Truncated)? as usize;
            let target = ((len & 0x3f) << 8) | b2;
            if !jumped {
                end = pos + 2;
                jumped = true;
            }
            hops += 1;
            if hops > 64 {
                return Err(WireError::PointerLoop);
            }
            pos = target;
            continue;
        }
        if len > 63 {
            return Err(WireError::LabelTooLong(len));
        }
        if len == 0 {
            if !jumped {
                end = pos + 1;
            }
            break;
        }
        let start = pos + 1;
        let stop = start + len;
        if stop > bytes.len() {
            return Err(WireError::Truncated);
        }
        labels.push(String::from_utf8_lossy(&bytes[start..stop]).to_ascii_lowercase());
        pos = stop;
        if labels.iter().map(|l| l.len() + 1).sum::<usize>() > 255 {
            return Err(WireError::NameTooLong);
        }
    }
    Ok((labels.join("."), end))
}
