//! Orchestration of distributed data-collection experiments.
//!
//! Experiments map pipelines of staged tasks onto nodes. A director
//! compiles them into per-node bundles, prepares nodes through connectors,
//! launches node executors and collects their reports through the gateway.

pub mod canonical;
pub mod client;
pub mod clock;
pub mod compiler;
pub mod connectivity;
pub mod director;
pub mod executor;
pub mod gateway;
pub mod manifest;
pub mod model;
pub mod tasks;
