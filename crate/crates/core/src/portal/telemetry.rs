use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub at: DateTime<Utc>,
    pub request_id: String,
    pub user_id: String,
    pub stage: String,
    pub latency_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Bounded in-memory event buffer, optionally mirrored to a JSONL file.
pub struct Telemetry {
    capacity: usize,
    events: Mutex<VecDeque<TelemetryEvent>>,
    sink: Option<Mutex<File>>,
}

impl Telemetry {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            events: Mutex::new(VecDeque::new()),
            sink: None,
        }
    }

    pub fn with_log_file(mut self, path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.sink = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn emit(&self, event: TelemetryEvent) {
        if let Some(sink) = &self.sink {
            if let Ok(line) = serde_json::to_string(&event) {
                let mut f = sink.lock();
                if let Err(e) = writeln!(f, "{line}") {
                    tracing::warn!("telemetry write failed: {e}");
                }
            }
        }
        let mut events = self.events.lock();
        if events.len() == self.capacity {
            events.pop_front();
        }
        events.push_back(event);
    }

    /// The newest `limit` events, oldest first.
    pub fn recent(&self, limit: usize) -> Vec<TelemetryEvent> {
        let events = self.events.lock();
        events.iter().skip(events.len().saturating_sub(limit)).cloned().collect()
    }

    pub fn for_request(&self, request_id: &str) -> Vec<TelemetryEvent> {
        self.events
            .lock()
            .iter()
            .filter(|e| e.request_id == request_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
