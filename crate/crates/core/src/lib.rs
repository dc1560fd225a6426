//! Demand-side management for access networks: workload models, a
//! first-match policy engine, survey-driven user agents and a
//! discrete-event simulator of a two-link network with edge caching.

pub mod agents;
pub mod cache;
pub mod demand;
pub mod error;
pub mod policy;
pub mod rewrite;
pub mod scenario;
pub mod sim;

pub use error::{ConfigError, SimError};
