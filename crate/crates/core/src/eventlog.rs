//! Append-only JSONL event log. Every crawl action is recorded as one
//! line with a monotone sequence number; reports are recomputed from
//! these records rather than from crawler state.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::check::{CheckEvidence, FilterReason, FilterStatus, FilterVerdict, VerdictRecord};
use crate::domain::DomainName;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// One page fetch attempt (successful or not).
    Fetch {
        url: String,
        domain: DomainName,
        depth: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<u16>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body_length: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// One extracted hyperlink that survived asset/self-reference removal.
    Link {
        from_url: String,
        to_url: String,
        from_domain: DomainName,
        to_domain: DomainName,
    },
    /// One filtering check result.
    Verdict {
        domain: DomainName,
        status: FilterStatus,
        reason: FilterReason,
        country: String,
        checked_at: DateTime<Utc>,
        evidence: CheckEvidence,
    },
    /// A URL admitted to the frontier.
    Enqueue {
        url: String,
        depth: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        referrer_domain: Option<DomainName>,
    },
}

impl EventKind {
    pub fn verdict(verdict: &FilterVerdict, country: &str) -> Self {
        let record = VerdictRecord::new(verdict, country);
        EventKind::Verdict {
            domain: record.domain,
            status: record.status,
            reason: record.reason,
            country: record.country,
            checked_at: record.checked_at,
            evidence: record.evidence,
        }
    }
}

/// Destination for crawl events. Appends may arrive from the coordinator
/// only, but sinks must tolerate being shared across threads.
pub trait EventSink: Send + Sync {
    fn append(&self, event: &Event) -> Result<()>;
    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

/// File-backed JSONL sink.
pub struct JsonlSink {
    writer: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        Ok(Self { writer: Mutex::new(BufWriter::new(file)) })
    }

    /// Open for appending, preserving existing records (resume).
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { writer: Mutex::new(BufWriter::new(file)) })
    }
}

impl EventSink for JsonlSink {
    fn append(&self, event: &Event) -> Result<()> {
        let mut writer = self.writer.lock().unwrap();
        serde_json::to_writer(&mut *writer, event)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        self.writer.lock().unwrap().flush()?;
        Ok(())
    }
}

impl Drop for JsonlSink {
    fn drop(&mut self) {
        if let Ok(mut w) = self.writer.lock() {
            let _ = w.flush();
        }
    }
}

/// In-memory sink for tests.
#[derive(Default)]
pub struct MemorySink {
    events: Mutex<Vec<Event>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().unwrap().clone()
    }
}

impl EventSink for MemorySink {
    fn append(&self, event: &Event) -> Result<()> {
        self.events.lock().unwrap().push(event.clone());
        Ok(())
    }
}

/// Read a log back. A partial final line (a run that was killed
/// mid-append) is tolerated and dropped; garbage anywhere else is an
/// error naming the last good sequence number.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut last_seq = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let had_newline = line.ends_with('\n');
        let text = line.trim_end();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(text) {
            Ok(event) => {
                last_seq = event.seq;
                events.push(event);
            }
            Err(e) => {
                if !had_newline {
                    break; // torn final write
                }
                return Err(Error::TruncatedLog { last_seq, reason: e.to_string() });
            }
        }
    }
    Ok(events)
}

/// Verify the log is a complete run: sequence numbers 1..=N with no gaps.
pub fn validate_contiguous(events: &[Event]) -> Result<()> {
    for (i, event) in events.iter().enumerate() {
        let expect = i as u64 + 1;
        if event.seq != expect {
            return Err(Error::TruncatedLog {
                last_seq: expect - 1,
                reason: format!("expected seq {expect}, found {}", event.seq),
            });
        }
    }
    Ok(())
}
