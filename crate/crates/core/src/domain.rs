//! DNS domain names, stored lowercase and punycode-encoded.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most octets a full encoded name may occupy on the wire.
const MAX_NAME_LEN: usize = 253;
const MAX_LABEL_LEN: usize = 63;

/// A fully-qualified domain name, normalized to lowercase ASCII.
///
/// Unicode input is converted to punycode on construction, so two spellings
/// of the same name always compare equal. Labels are validated against the
/// usual DNS limits (1-63 octets each, 253 total).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainName(String);

impl DomainName {
    pub fn parse(input: &str) -> Result<Self> {
        let trimmed = input.trim().trim_end_matches('.');
        if trimmed.is_empty() {
            return err(input, "empty name");
        }
        let ascii = if trimmed.is_ascii() {
            trimmed.to_ascii_lowercase()
        } else {
            idna::domain_to_ascii(trimmed)
                .map_err(|e| Error::InvalidDomain { input: input.to_string(), reason: e.to_string() })?
        };
        if ascii.len() > MAX_NAME_LEN {
            return err(input, "name longer than 253 octets");
        }
        for label in ascii.split('.') {
            if label.is_empty() {
                return err(input, "empty label");
            }
            if label.len() > MAX_LABEL_LEN {
                return err(input, "label longer than 63 octets");
            }
            if !label.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
                return err(input, "label contains invalid character");
            }
            if label.starts_with('-') || label.ends_with('-') {
                return err(input, "label starts or ends with a hyphen");
            }
        }
        Ok(DomainName(ascii))
    }

    /// Construct from labels already known to be valid.
    pub(crate) fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let joined = labels.into_iter().map(|l| l.as_ref().to_string()).collect::<Vec<_>>().join(".");
        Self::parse(&joined)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn labels(&self) -> impl DoubleEndedIterator<Item = &str> {
        self.0.split('.')
    }

    pub fn label_count(&self) -> usize {
        self.0.split('.').count()
    }

    /// True if `self` equals `other` or is a subdomain of it.
    pub fn is_subdomain_of(&self, other: &DomainName) -> bool {
        self.0 == other.0 || self.0.ends_with(&format!(".{}", other.0))
    }
}

fn err<T>(input: &str, reason: &str) -> Result<T> {
    Err(Error::InvalidDomain { input: input.to_string(), reason: reason.to_string() })
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<String> for DomainName {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        DomainName::parse(&value)
    }
}

impl From<DomainName> for String {
    fn from(value: DomainName) -> Self {
        value.0
    }
}

impl std::str::FromStr for DomainName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DomainName::parse(s)
    }
}
