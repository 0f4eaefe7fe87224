//! DNS wire codec and blocking query client.

pub mod client;
pub mod wire;
