//! Text and context featurization.
//!
//! A query becomes a single feature vector: the unit-norm text embedding,
//! followed by recency scores over the user's app vocabulary, followed by a
//! 9-component time encoding (sin/cos of the hour-of-day fraction and a
//! one-hot weekday).

use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Datelike, FixedOffset, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ContextConfig, EncoderConfig, EncoderKind};

/// Number of components in the time block.
pub const TIME_DIM: usize = 9;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("external encoder failed: {0}")]
    External(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextVector(pub Vec<f64>);

impl TextVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub app_part: Vec<f64>,
    pub time_part: [f64; TIME_DIM],
}

impl ContextVector {
    pub fn zeroed(apps: usize) -> Self {
        Self {
            app_part: vec![0.0; apps],
            time_part: [0.0; TIME_DIM],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rounds every component through `f32`, matching what the vector
    /// sidecar stores on disk.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.0 {
            *v = *v as f32 as f64;
        }
        self
    }
}

/// One app launch observed before the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppLaunch {
    pub app: String,
    pub at: DateTime<Utc>,
}

/// Recent app launches plus the wall-clock time (with the user's offset) at
/// which the query was typed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub now: DateTime<FixedOffset>,
    #[serde(default)]
    pub launches: Vec<AppLaunch>,
}

impl ContextSnapshot {
    pub fn at(now: DateTime<FixedOffset>) -> Self {
        Self {
            now,
            launches: Vec::new(),
        }
    }

    pub fn utc(&self) -> DateTime<Utc> {
        self.now.with_timezone(&Utc)
    }

    /// Distinct apps launched within `window` seconds before `now`, in order
    /// of first appearance.
    pub fn recent_apps(&self, window_seconds: f64) -> Vec<&str> {
        let now = self.utc();
        let mut out: Vec<&str> = Vec::new();
        for l in &self.launches {
            let dt = (now - l.at).num_milliseconds() as f64 / 1000.0;
            if (0.0..=window_seconds).contains(&dt) && !out.contains(&l.app.as_str()) {
                out.push(&l.app);
            }
        }
        out
    }
}

/// Linear chat-intent gate over the full feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatGateParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ChatGateParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn score(&self, v: &FeatureVector) -> Result<f64, EncoderError> {
        if self.weights.len() != v.dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.weights.len(),
                actual: v.dim(),
            });
        }
        Ok(dot(&self.weights, v.as_slice()) + self.bias)
    }
}

/// Maps raw text to a unit-norm vector.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<TextVector, EncoderError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const BOS: char = '\u{2}';
const EOS: char = '\u{3}';

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(bytes)
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing over character trigrams of the normalized text
/// (lowercased, whitespace collapsed, padded with boundary markers).
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim, seed }
    }
}

pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl TextEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<TextVector, EncoderError> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let chars: Vec<char> = std::iter::once(BOS)
            .chain(norm.chars())
            .chain(std::iter::once(EOS))
            .collect();
        let mut values = vec![0.0; self.dim];
        let mut hashes = Vec::with_capacity(chars.len());
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(self.seed, buf.as_bytes());
            hashes.push(h);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[(h % self.dim as u64) as usize] += sign;
        }
        // signed collisions can cancel everything out on tiny dimensions
        if values.iter().all(|v| *v == 0.0) {
            for h in &hashes {
                values[(h % self.dim as u64) as usize] += 1.0;
            }
        }
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= n);
        Ok(TextVector(values))
    }
}

/// Embedding provider behind an OpenAI-compatible `/embeddings` endpoint.
/// Returned vectors are renormalized to unit length.
pub struct ExternalEncoder {
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl ExternalEncoder {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: Option<&str>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, EncoderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EncoderError::External(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            model: model.into(),
            api_key: api_key_env.and_then(|k| std::env::var(k).ok()),
            dim,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl TextEncoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<TextVector, EncoderError> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.url.trim_end_matches('/')))
            .json(&serde_json::json!({ "model": self.model, "input": norm }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EncoderError::External(e.to_string()))?;
        let body: EmbeddingResponse = resp
            .json()
            .map_err(|e| EncoderError::External(e.to_string()))?;
        let mut values = body
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EncoderError::External("empty embedding response".into()))?;
        if values.len() != self.dim {
            return Err(EncoderError::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(EncoderError::External("degenerate embedding".into()));
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(TextVector(values))
    }
}

pub fn build_encoder(cfg: &EncoderConfig) -> Result<Arc<dyn TextEncoder>, EncoderError> {
    match cfg.kind {
        EncoderKind::Hash => Ok(Arc::new(HashEncoder::new(cfg.dim, cfg.hash_seed))),
        EncoderKind::External => {
            let url = cfg
                .endpoint
                .as_deref()
                .ok_or_else(|| EncoderError::External("encoder.endpoint is not set".into()))?;
            Ok(Arc::new(ExternalEncoder::new(
                url,
                cfg.model.clone().unwrap_or_default(),
                cfg.api_key_env.as_deref(),
                cfg.dim,
                Duration::from_millis(cfg.timeout_ms),
            )?))
        }
    }
}

/// Exponential-decay recency per vocabulary app plus the time encoding.
///
/// Launches outside the vocabulary, later than `now`, or older than the
/// window are ignored.
pub fn encode_context(
    snapshot: &ContextSnapshot,
    app_vocab: &[String],
    now: DateTime<FixedOffset>,
    params: &ContextConfig,
) -> ContextVector {
    let mut app_part = vec![0.0; app_vocab.len()];
    let now_utc = now.with_timezone(&Utc);
    for launch in &snapshot.launches {
        let Some(idx) = app_vocab.iter().position(|a| *a == launch.app) else {
            continue;
        };
        let dt = (now_utc - launch.at).num_milliseconds() as f64 / 1000.0;
        if (0.0..=params.window_seconds).contains(&dt) {
            app_part[idx] += (-dt / params.tau_seconds).exp();
        }
    }
    ContextVector {
        app_part,
        time_part: encode_time(now),
    }
}

pub fn encode_time(now: DateTime<FixedOffset>) -> [f64; TIME_DIM] {
    let secs = now.num_seconds_from_midnight() as f64 + now.nanosecond() as f64 * 1e-9;
    let angle = TAU * secs / 86_400.0;
    let mut out = [0.0; TIME_DIM];
    out[0] = angle.sin();
    out[1] = angle.cos();
    out[2 + now.weekday().num_days_from_monday() as usize] = 1.0;
    out
}

/// Plain concatenation: text, then app recency, then time.
pub fn assemble_feature(t: &TextVector, c: &ContextVector) -> FeatureVector {
    assemble_weighted(t, c, 1.0, 1.0)
}

/// Concatenation with the context blocks scaled by the given weights.
pub fn assemble_weighted(
    t: &TextVector,
    c: &ContextVector,
    app_weight: f64,
    time_weight: f64,
) -> FeatureVector {
    let mut v = Vec::with_capacity(t.dim() + c.app_part.len() + TIME_DIM);
    v.extend_from_slice(&t.0);
    v.extend(c.app_part.iter().map(|x| x * app_weight));
    v.extend(c.time_part.iter().map(|x| x * time_weight));
    FeatureVector(v)
}

/// Checked assembly against an expected layout.
pub fn assemble_checked(
    t: &TextVector,
    c: &ContextVector,
    text_dim: usize,
    apps: usize,
) -> Result<FeatureVector, EncoderError> {
    if t.dim() != text_dim {
        return Err(EncoderError::DimensionMismatch {
            expected: text_dim,
            actual: t.dim(),
        });
    }
    if c.app_part.len() != apps {
        return Err(EncoderError::DimensionMismatch {
            expected: apps,
            actual: c.app_part.len(),
        });
    }
    Ok(assemble_feature(t, c))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that the input is addressed to a contact.
pub fn chat_gate(v: &FeatureVector, p: &ChatGateParams) -> Result<f64, EncoderError> {
    p.score(v).map(sigmoid)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Text encoder plus context settings; produces the feature vectors stored
/// with records and used for retrieval.
#[derive(Clone)]
pub struct Featurizer {
    encoder: Arc<dyn TextEncoder>,
    context: ContextConfig,
}

impl Featurizer {
    pub fn new(encoder: Arc<dyn TextEncoder>, context: ContextConfig) -> Self {
        Self { encoder, context }
    }

    pub fn from_config(enc: &EncoderConfig, ctx: &ContextConfig) -> Result<Self, EncoderError> {
        Ok(Self::new(build_encoder(enc)?, ctx.clone()))
    }

    pub fn text_dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn feature_dim(&self, apps: usize) -> usize {
        self.encoder.dim() + apps + TIME_DIM
    }

    pub fn context_config(&self) -> &ContextConfig {
        &self.context
    }

    pub fn encoder(&self) -> &dyn TextEncoder {
        self.encoder.as_ref()
    }

    pub fn featurize(
        &self,
        text: &str,
        snapshot: &ContextSnapshot,
        app_vocab: &[String],
    ) -> Result<FeatureVector, EncoderError> {
        let t = self.encoder.encode(text)?;
        let c = encode_context(snapshot, app_vocab, snapshot.now, &self.context);
        Ok(assemble_weighted(&t, &c, self.context.app_weight, self.context.time_weight).quantized())
    }
}
