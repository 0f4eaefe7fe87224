//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain name {input:?}: {reason}")]
    InvalidDomain { input: String, reason: String },

    #[error("invalid url {input:?}: {reason}")]
    InvalidUrl { input: String, reason: String },

    #[error("invalid resolver profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("public suffix list: {0}")]
    Psl(String),

    #[error("domain {0} is itself a public suffix")]
    BareSuffix(String),

    #[error("world spec: {0}")]
    World(String),

    #[error("simulated network startup: {0}")]
    SimStartup(String),

    #[error("event log truncated or corrupt after sequence {last_seq}: {reason}")]
    TruncatedLog { last_seq: u64, reason: String },

    #[error("snapshot is for country {snapshot} but profile is for {profile}")]
    SnapshotCountryMismatch { snapshot: String, profile: String },

    #[error("resolver profile unreachable: {0}")]
    ProfileUnreachable(String),

    #[error("geo database {path}: {reason}")]
    GeoDb { path: PathBuf, reason: String },

    #[error("category provider: {0}")]
    CategoryProvider(String),

    #[error("report: {0}")]
    Report(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

}

pub type Result<T> = std::result::Result<T, Error>;
