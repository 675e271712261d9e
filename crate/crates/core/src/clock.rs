//! Timestamps carrying both a wall-clock reading and a monotonic offset.
//!
//! Wall time orders events across processes on the same host (the gateway
//! stamps flags with it). The monotonic part is relative to the epoch of the
//! [`MonotonicClock`] that produced it and is only comparable within one
//! executor run.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    /// Nanoseconds since the UNIX epoch.
    pub wall_ns: i64,
    /// Nanoseconds since the producing clock's epoch.
    pub mono_ns: u64,
}

pub fn wall_now_ns() -> i64 {
    match SystemTime::now().duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_nanos() as i64,
        Err(e) => -(e.duration().as_nanos() as i64),
    }
}

pub fn wall_now_ms() -> i64 {
    wall_now_ns() / 1_000_000
}

/// Monotonic clock backed by the tokio timer, so paused-time tests observe
/// virtual time consistently.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    epoch: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { epoch: Instant::now() }
    }

    pub fn elapsed_ns(&self) -> u64 {
        Instant::now().duration_since(self.epoch).as_nanos() as u64
    }

    pub fn now(&self) -> Timestamp {
        Timestamp { wall_ns: wall_now_ns(), mono_ns: self.elapsed_ns() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}
