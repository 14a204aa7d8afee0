//! OpenAI-compatible chat-completion client (blocking).

use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError, LlmResponse};
use crate::config::LlmConfig;

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    stream: bool,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpLlm {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    permits: Permits,
}

impl HttpLlm {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, max_concurrent: usize) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            client,
            permits: Permits {
                free: Mutex::new(max_concurrent.max(1)),
                cv: Condvar::new(),
            },
        })
    }

    /// Reads the API key from the configured environment variable.
    pub fn from_config(cfg: &LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self::new(&cfg.endpoint, &cfg.model, key, cfg.max_concurrent)
    }

    pub fn api_key(&self) -> Option<&str> {
        self.api_key.as_deref()
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<LlmResponse, LlmError> {
        let queued = Instant::now();
        let _permit = self.permits.acquire();
        let waited = queued.elapsed();
        let remaining = timeout.saturating_sub(waited);
        if remaining.is_zero() {
            return Err(LlmError::Timeout(timeout.as_millis() as u64));
        }
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
            stream: false,
        };
        let mut req = self.client.post(&self.url).timeout(remaining).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let start = Instant::now();
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout(timeout.as_millis() as u64)
            } else {
                LlmError::Transport(e.to_string())
            }
        };
        let resp = req.send().map_err(map_err)?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited);
        }
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}")));
        }
        let processing_ms = resp
            .headers()
            .get("openai-processing-ms")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<f64>().ok());
        let parsed: ChatResponse = resp.json().map_err(map_err)?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("response has no message content".into()))?;
        // without a server-side timing header the whole round trip counts as model time
        let model_ms = processing_ms.unwrap_or(wall).min(wall);
        Ok(LlmResponse {
            text,
            model_ms,
            transport_ms: wall - model_ms + waited.as_secs_f64() * 1e3,
        })
    }
}
