use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayApi, IngestAck};

use super::bundle::{PipelineReport, RetryPolicy};
use super::context::{ExecutionObserver, Spool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum DeliveryState {
    Delivered { attempts: u32, ack: IngestAck },
    /// Retries exhausted; the report waits in the spool for the next launch.
    Spooled { attempts: u32, location: String, last_error: String },
    /// The gateway answered with a permanent error; retrying cannot help.
    Rejected { attempts: u32, error: String },
}

impl DeliveryState {
    pub fn attempts(&self) -> u32 {
        match self {
            DeliveryState::Delivered { attempts, .. }
            | DeliveryState::Spooled { attempts, .. }
            | DeliveryState::Rejected { attempts, .. } => *attempts,
        }
    }

    pub fn is_delivered(&self) -> bool {
        matches!(self, DeliveryState::Delivered { .. })
    }
}

/// Spools the report, then delivers it with exponential backoff. The spool
/// entry is removed once the gateway acknowledges (or permanently rejects)
/// the report.
pub async fn deliver_report(
    report: &PipelineReport,
    gateway: &dyn GatewayApi,
    spool: &dyn Spool,
    policy: RetryPolicy,
    observer: Option<&Arc<dyn ExecutionObserver>>,
) -> DeliveryState {
    let location = match spool.put(report) {
        Ok(l) => l,
        Err(e) => {
            tracing::warn!(error = %e, "cannot spool report before delivery");
            String::new()
        }
    };
    let max = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=max {
        let res = gateway.ingest_report(report).await;
        if let Some(obs) = observer {
            obs.report_attempt(&report.experiment_id, attempt, res.is_ok());
        }
        match res {
            Ok(ack) => {
                if let Err(e) = spool.remove(&report.experiment_id, &report.node_id) {
                    tracing::warn!(error = %e, "cannot remove delivered report from spool");
                }
                return DeliveryState::Delivered { attempts: attempt, ack };
            }
            Err(e) if !e.is_retryable() => {
                let _ = spool.remove(&report.experiment_id, &report.node_id);
                return DeliveryState::Rejected { attempts: attempt, error: e.to_string() };
            }
            Err(e) => {
                tracing::debug!(attempt, error = %e, "report delivery failed");
                last_error = e.to_string();
            }
        }
        if attempt < max {
            tokio::time::sleep(policy.delay_after(attempt)).await;
        }
    }
    DeliveryState::Spooled { attempts: max, location, last_error }
}

/// One delivery attempt for every spooled report. Returns the states of the
/// reports it tried.
pub async fn drain_spool(gateway: &dyn GatewayApi, spool: &dyn Spool) -> Vec<(String, String, DeliveryState)> {
    let pending = match spool.pending() {
        Ok(p) => p,
        Err(e) => {
            tracing::warn!(error = %e, "cannot read spool");
            return Vec::new();
        }
    };
    let mut out = Vec::new();
    let once = RetryPolicy { max_attempts: 1, ..RetryPolicy::default() };
    for report in pending {
        let state = deliver_report(&report, gateway, spool, once, None).await;
        out.push((report.experiment_id.clone(), report.node_id.clone(), state));
    }
    out
}
