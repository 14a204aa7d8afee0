//! Everything that talks to (or pretends to be) the large language model.

mod client;
mod parse;
mod prompt;
mod stub;
mod synthetic;

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub use client::HttpLlm;
pub use parse::{parse_ranking, render_ranking, LlmRanking, MAX_RANKED};
pub use prompt::{
    build_contact_prompt, build_function_prompt, describe_app_usage, describe_time, history_cap,
    ContactPrompt, FewShotBlock, FunctionPrompt, QueryBlock, PROMPT_TEMPLATE_VERSION,
};
pub use stub::{ScriptedStubLlm, StubDelay, StubFailure};
pub use synthetic::{generate_synthetic, synthetic_queries, template_queries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM request timed out after {0} ms")]
    Timeout(u64),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by the LLM endpoint")]
    RateLimited,
    #[error("no candidate could be recovered from the LLM output")]
    Unparseable,
    #[error("prompt needs at least one candidate")]
    NoCandidates,
    #[error("prompt needs at least one contact")]
    NoContacts,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    /// Time the model spent producing the answer.
    pub model_ms: f64,
    /// Network and queueing overhead on top of `model_ms`.
    pub transport_ms: f64,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<LlmResponse, LlmError>;
}

/// Single-step query with a deadline.
pub fn query(backend: &dyn LlmBackend, prompt: &str, timeout_ms: u64) -> Result<LlmResponse, LlmError> {
    backend.complete(prompt, Duration::from_millis(timeout_ms))
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub at: chrono::DateTime<chrono::Utc>,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub model_ms: f64,
    pub transport_ms: f64,
    pub wall_ms: f64,
}

/// Wraps a backend and records every request/response pair, optionally to a
/// JSONL file. Known secrets are replaced with `[REDACTED]` before logging.
pub struct AuditedLlm {
    inner: Arc<dyn LlmBackend>,
    seq: AtomicUsize,
    secrets: Vec<String>,
    keep: usize,
    entries: Mutex<Vec<AuditEntry>>,
    sink: Option<Mutex<std::fs::File>>,
}

impl AuditedLlm {
    pub fn new(inner: Arc<dyn LlmBackend>) -> Self {
        Self {
            inner,
            seq: AtomicUsize::new(0),
            secrets: Vec::new(),
            keep: 1_000,
            entries: Mutex::new(Vec::new()),
            sink: None,
        }
    }

    pub fn with_log_file(mut self, path: &Path) -> std::io::Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.sink = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn with_secret(mut self, secret: impl Into<String>) -> Self {
        let s = secret.into();
        if !s.is_empty() {
            self.secrets.push(s);
        }
        self
    }

    /// Number of requests issued so far.
    pub fn calls(&self) -> usize {
        self.seq.load(Ordering::SeqCst)
    }

    /// The most recent entries (bounded buffer).
    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().clone()
    }

    fn redact(&self, s: &str) -> String {
        self.secrets
            .iter()
            .fold(s.to_string(), |acc, k| acc.replace(k.as_str(), "[REDACTED]"))
    }
}

impl LlmBackend for AuditedLlm {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<LlmResponse, LlmError> {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let out = self.inner.complete(prompt, timeout);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let (response, error, model_ms, transport_ms) = match &out {
            Ok(r) => (Some(self.redact(&r.text)), None, r.model_ms, r.transport_ms),
            Err(e) => (None, Some(self.redact(&e.to_string())), 0.0, wall_ms),
        };
        let entry = AuditEntry {
            seq,
            at: chrono::Utc::now(),
            prompt: self.redact(prompt),
            response,
            error,
            model_ms,
            transport_ms,
            wall_ms,
        };
        tracing::debug!(seq, wall_ms, ok = out.is_ok(), "llm request");
        if let Some(sink) = &self.sink {
            let mut line = serde_json::to_vec(&entry).expect("audit entry serializes");
            line.push(b'\n');
            if let Err(e) = sink.lock().write_all(&line) {
                tracing::warn!("audit log write failed: {e}");
            }
        }
        let mut entries = self.entries.lock();
        if entries.len() >= self.keep {
            entries.remove(0);
        }
        entries.push(entry);
        out
    }
}

/// FNV-1a over a seed and a byte string; stable across platforms and runs.
pub(crate) fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(bytes)
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_counts_and_redacts() {
        let stub = Arc::new(ScriptedStubLlm::new(1, 1.0).with_fixed_response("key sk-123 leaked"));
        let audited = AuditedLlm::new(stub).with_secret("sk-123");
        let r = audited.complete("hello sk-123", Duration::from_secs(1)).unwrap();
        assert_eq!(r.text, "key sk-123 leaked");
        assert_eq!(audited.calls(), 1);
        let e = &audited.entries()[0];
        assert_eq!(e.prompt, "hello [REDACTED]");
        assert_eq!(e.response.as_deref(), Some("key [REDACTED] leaked"));
    }

    #[test]
    fn audit_log_file_is_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let stub = Arc::new(ScriptedStubLlm::new(1, 1.0).with_fixed_response("ok"));
        let audited = AuditedLlm::new(stub).with_log_file(&path).unwrap();
        audited.complete("a", Duration::from_secs(1)).unwrap();
        audited.complete("b", Duration::from_secs(1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["prompt"], "b");
    }
}
