//! Resolver endpoints and per-country resolver profiles.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a resolver endpoint is used for during a filtering check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolverRole {
    /// Uncensored resolver providing ground-truth answers.
    Control,
    /// Open resolver inside the target country.
    Measurement,
    /// Unallocated address inside the target ISP; any answer proves interception.
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolverEndpoint {
    pub address: Ipv4Addr,
    #[serde(default = "default_dns_port")]
    pub port: u16,
    pub role: ResolverRole,
}

fn default_dns_port() -> u16 {
    53
}

impl ResolverEndpoint {
    pub fn new(address: Ipv4Addr, port: u16, role: ResolverRole) -> Self {
        Self { address, port, role }
    }

    pub fn control(address: Ipv4Addr) -> Self {
        Self::new(address, 53, ResolverRole::Control)
    }

    pub fn measurement(address: Ipv4Addr) -> Self {
        Self::new(address, 53, ResolverRole::Measurement)
    }

    pub fn fake(address: Ipv4Addr) -> Self {
        Self::new(address, 53, ResolverRole::Fake)
    }
}

/// The set of resolvers used to measure one country.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolverProfile {
    /// ISO 3166-1 alpha-2 code.
    pub country: String,
    pub control: ResolverEndpoint,
    pub measurement: Vec<ResolverEndpoint>,
    pub fake: Vec<ResolverEndpoint>,
}

impl ResolverProfile {
    pub fn new(
        country: &str,
        control: ResolverEndpoint,
        measurement: Vec<ResolverEndpoint>,
        fake: Vec<ResolverEndpoint>,
    ) -> Result<Self> {
        let profile = Self { country: country.to_uppercase(), control, measurement, fake };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.country.len() != 2 || !self.country.bytes().all(|b| b.is_ascii_alphabetic()) {
            return Err(Error::InvalidProfile(format!(
                "country must be an ISO 3166-1 alpha-2 code, got {:?}",
                self.country
            )));
        }
        if self.control.role != ResolverRole::Control {
            return Err(Error::InvalidProfile("control endpoint must have role=control".into()));
        }
        if self.measurement.is_empty() {
            return Err(Error::InvalidProfile("at least one measurement endpoint required".into()));
        }
        if self.fake.is_empty() {
            return Err(Error::InvalidProfile("at least one fake endpoint required".into()));
        }
        if self.measurement.iter().any(|e| e.role != ResolverRole::Measurement) {
            return Err(Error::InvalidProfile("measurement endpoints must have role=measurement".into()));
        }
        if self.fake.iter().any(|e| e.role != ResolverRole::Fake) {
            return Err(Error::InvalidProfile("fake endpoints must have role=fake".into()));
        }
        Ok(())
    }

    /// The endpoints a single filtering check consults. The remaining pool
    /// entries are operator spares.
    pub fn primary_measurement(&self) -> &ResolverEndpoint {
        &self.measurement[0]
    }

    pub fn primary_fake(&self) -> &ResolverEndpoint {
        &self.fake[0]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: ResolverProfile = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint(addr: &str, role: ResolverRole) -> ResolverEndpoint {
        ResolverEndpoint::new(addr.parse().unwrap(), 53, role)
    }

    #[test]
    fn accepts_well_formed_profile() {
        let p = ResolverProfile::new(
            "tr",
            endpoint("8.8.8.8", ResolverRole::Control),
            vec![endpoint("195.175.39.39", ResolverRole::Measurement)],
            vec![endpoint("195.175.30.39", ResolverRole::Fake)],
        )
        .unwrap();
        assert_eq!(p.country, "TR");
    }

    #[test]
    fn rejects_role_mismatch_and_empty_pools() {
        let control = endpoint("8.8.8.8", ResolverRole::Control);
        let m = endpoint("1.1.1.1", ResolverRole::Measurement);
        let f = endpoint("2.2.2.2", ResolverRole::Fake);
        assert!(ResolverProfile::new("cn", control, vec![], vec![f]).is_err());
        assert!(ResolverProfile::new("cn", control, vec![m], vec![]).is_err());
        assert!(ResolverProfile::new("cn", control, vec![f], vec![f]).is_err());
        assert!(ResolverProfile::new("china", control, vec![m], vec![f]).is_err());
    }

    #[test]
    fn json_defaults_port_53() {
        let p = ResolverProfile::from_json(
            r#"{"country":"IR",
                "control":{"address":"8.8.8.8","role":"control"},
                "measurement":[{"address":"94.183.43.170","role":"measurement"}],
                "fake":[{"address":"94.183.92.90","role":"fake"}]}"#,
        )
        .unwrap();
        assert_eq!(p.control.port, 53);
    }
}
