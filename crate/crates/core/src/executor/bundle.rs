use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::clock::Timestamp;
use crate::model::{NodeKind, Pipeline, TaskResult};

pub const EXECUTOR_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exponential backoff for report delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base_delay_ms: 1000, factor: 2, max_attempts: 5 }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let mult = (self.factor as u64).saturating_pow(attempt.saturating_sub(1));
        Duration::from_millis(self.base_delay_ms.saturating_mul(mult))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorSettings {
    pub report_retry: RetryPolicy,
    pub flag_poll_interval_ms: u64,
}

impl Default for ExecutorSettings {
    fn default() -> Self {
        Self { report_retry: RetryPolicy::default(), flag_poll_interval_ms: 500 }
    }
}

/// Everything a node executor needs to run its pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBundle {
    pub experiment_id: String,
    pub node_id: String,
    pub node_kind: NodeKind,
    pub pipeline: Pipeline,
    /// task name -> implementation id
    pub implementations: BTreeMap<String, String>,
    pub early_stop: bool,
    pub settings: ExecutorSettings,
    /// Digest over all other fields; set by [`PipelineBundle::seal`].
    #[serde(default)]
    pub digest: String,
}

impl PipelineBundle {
    pub fn compute_digest(&self) -> String {
        let mut unsealed = self.clone();
        unsealed.digest.clear();
        canonical::digest_of(&unsealed)
    }

    pub fn seal(mut self) -> Self {
        self.digest = self.compute_digest();
        self
    }

    pub fn verify_digest(&self) -> bool {
        !self.digest.is_empty() && self.digest == self.compute_digest()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub dispatched_at: Timestamp,
    pub completed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub experiment_id: String,
    pub node_id: String,
    pub bundle_digest: String,
    /// Results in pipeline order, one per task.
    pub results: Vec<TaskResult>,
    #[serde(default)]
    pub stages: Vec<StageTrace>,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub executor_version: String,
}

impl PipelineReport {
    /// Indices of stages whose earliest task start precedes the latest finish
    /// of the previous executed stage (monotonic clock). Empty means the
    /// barrier held.
    pub fn barrier_violations(&self) -> Vec<usize> {
        let mut by_stage: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
        for r in &self.results {
            if let (Some(s), Some(f)) = (r.started_at, r.finished_at) {
                let e = by_stage.entry(r.stage).or_insert((u64::MAX, 0));
                e.0 = e.0.min(s.mono_ns);
                e.1 = e.1.max(f.mono_ns);
            }
        }
        let stages: Vec<_> = by_stage.into_iter().collect();
        stages
            .windows(2)
            .filter(|w| w[1].1 .0 < w[0].1 .1)
            .map(|w| w[1].0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backoff_schedule() {
        let p = RetryPolicy::default();
        let delays: Vec<_> = (1..p.max_attempts).map(|a| p.delay_after(a).as_millis()).collect();
        assert_eq!(delays, [1000, 2000, 4000, 8000]);
    }
}
