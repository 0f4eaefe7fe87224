//! Discovery of DNS-filtered domains by crawling the links between
//! blocked sites.
//!
//! The pieces fit together like this: [`check`] decides whether a domain
//! is filtered by comparing measurement, control and fake resolvers
//! ([`dns`] and [`http`] carry the actual exchanges, abstracted behind
//! [`net::Network`]). [`crawler`] walks outward from seed URLs, fetching
//! only pages of confirmed-filtered domains and logging every step to an
//! append-only event log ([`eventlog`]). [`psl`] splits and enumerates
//! names across public suffixes, [`linkgraph`] accumulates the
//! filtered-to-filtered hyperlink graph, [`enrich`] adds category and
//! location metadata, and [`report`] recomputes every published number
//! from the raw log. [`simnet`] provides a deterministic in-process
//! network (scripted resolvers and sites over real loopback sockets) plus
//! the brute-force discovery oracle the test suite checks the crawler
//! against.

pub mod check;
pub mod crawler;
pub mod dns;
pub mod domain;
pub mod enrich;
pub mod error;
pub mod eventlog;
pub mod html;
pub mod http;
pub mod linkgraph;
pub mod net;
pub mod profile;
pub mod report;
pub mod psl;
pub mod simnet;
pub mod urls;
