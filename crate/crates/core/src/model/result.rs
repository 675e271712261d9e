use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
    Skipped,
}

/// Task output. Binary payloads travel base64-encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Text(String),
    Json(serde_json::Value),
    #[serde(with = "b64")]
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_json(&self) -> Option<&serde_json::Value> {
        match self {
            Payload::Json(v) => Some(v),
            _ => None,
        }
    }
}

mod b64 {
    use super::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_name: String,
    pub node_id: String,
    /// Zero-based stage index within the pipeline.
    pub stage: usize,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
}

impl TaskResult {
    pub fn skipped(task_name: impl Into<String>, node_id: impl Into<String>, stage: usize) -> Self {
        Self {
            task_name: task_name.into(),
            node_id: node_id.into(),
            stage,
            outcome: Outcome::Skipped,
            started_at: None,
            finished_at: None,
            payload: None,
            error_text: None,
        }
    }

    /// Timestamps present and ordered for executed results, absent for
    /// skipped ones.
    pub fn timestamps_consistent(&self) -> bool {
        match (self.outcome, self.started_at, self.finished_at) {
            (Outcome::Skipped, None, None) => true,
            (Outcome::Skipped, _, _) => false,
            (_, Some(s), Some(f)) => f.mono_ns >= s.mono_ns && f.wall_ns >= s.wall_ns - 1_000_000,
            _ => false,
        }
    }

    pub fn duration_ns(&self) -> Option<u64> {
        Some(self.finished_at?.mono_ns.saturating_sub(self.started_at?.mono_ns))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_payload_is_base64() {
        let p = Payload::Bytes(vec![0, 1, 2, 255]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"bytes":"AAEC/w=="}"#);
        assert_eq!(serde_json::from_str::<Payload>(&s).unwrap(), p);
    }

    #[test]
    fn skipped_has_no_timestamps() {
        let r = TaskResult::skipped("t", "n", 2);
        assert!(r.timestamps_consistent());
        let mut bad = r.clone();
        bad.started_at = Some(Timestamp { wall_ns: 0, mono_ns: 0 });
        assert!(!bad.timestamps_consistent());
    }
}
