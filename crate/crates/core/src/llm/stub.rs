//! Deterministic stand-in for the LLM, used by tests and the replay harness.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::RwLock;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::parse::{render_ranking, LlmRanking, MAX_RANKED};
use super::{stable_hash, LlmBackend, LlmError, LlmResponse};
use crate::encoder::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StubDelay {
    None,
    /// Reported as model time without blocking the caller.
    Simulated(Duration),
    /// Actually sleeps.
    Sleep(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubFailure {
    Transport,
    RateLimited,
}

/// Answers ranking prompts from a script of query -> true function.
///
/// With probability `accuracy` the true function is ranked first; otherwise
/// a random wrong candidate is. The remaining slots are filled with a random
/// selection of the other candidates. All randomness is derived from the
/// seed and the prompt text, so answers do not depend on call order.
pub struct ScriptedStubLlm {
    seed: u64,
    accuracy: f64,
    delay: StubDelay,
    fixed: Option<String>,
    failure: Option<StubFailure>,
    exact: RwLock<HashMap<String, String>>,
    patterns: RwLock<Vec<(String, String)>>,
    recall: bool,
    calls: AtomicUsize,
}

impl ScriptedStubLlm {
    pub fn new(seed: u64, accuracy: f64) -> Self {
        Self {
            seed,
            accuracy: accuracy.clamp(0.0, 1.0),
            delay: StubDelay::None,
            fixed: None,
            failure: None,
            exact: RwLock::new(HashMap::new()),
            patterns: RwLock::new(Vec::new()),
            recall: false,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_delay(mut self, delay: StubDelay) -> Self {
        self.delay = delay;
        self
    }

    /// Always answer with `text`, whatever the prompt.
    pub fn with_fixed_response(mut self, text: impl Into<String>) -> Self {
        self.fixed = Some(text.into());
        self
    }

    /// When the prompt shows an example (or a chat history message) with the
    /// same text as the query, answer with that example's output first,
    /// ahead of the accuracy draw. Several matches vote; ties go to the
    /// first shown.
    pub fn with_example_recall(mut self, on: bool) -> Self {
        self.recall = on;
        self
    }

    pub fn failing(mut self, failure: StubFailure) -> Self {
        self.failure = Some(failure);
        self
    }

    /// Case-insensitive substring rule; checked after exact scripts.
    pub fn with_rule(self, pattern: &str, truth: &str) -> Self {
        self.add_rule(pattern, truth);
        self
    }

    pub fn add_rule(&self, pattern: &str, truth: &str) {
        self.patterns
            .write()
            .push((normalize_text(pattern), truth.to_string()));
    }

    /// Registers the true function for an exact (normalized) query.
    pub fn script(&self, query: &str, truth: &str) {
        self.exact
            .write()
            .insert(normalize_text(query), truth.to_string());
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn truth_for(&self, query: &str) -> Option<String> {
        let q = normalize_text(query);
        if let Some(t) = self.exact.read().get(&q) {
            return Some(t.clone());
        }
        self.patterns
            .read()
            .iter()
            .find(|(p, _)| q.contains(p.as_str()))
            .map(|(_, t)| t.clone())
    }

    /// The ranking the stub gives for `query` over `options`.
    pub fn rank(&self, prompt_key: &str, query: &str, options: &[String]) -> LlmRanking {
        self.rank_with_examples(prompt_key, query, options, &[])
    }

    fn recalled(&self, query: &str, options: &[String], examples: &[(String, String)]) -> Option<String> {
        if !self.recall {
            return None;
        }
        let q = normalize_text(query);
        let mut votes: Vec<(&str, usize)> = Vec::new();
        for (input, output) in examples {
            if normalize_text(input) == q && options.iter().any(|o| o == output) {
                match votes.iter_mut().find(|(o, _)| o == output) {
                    Some(v) => v.1 += 1,
                    None => votes.push((output, 1)),
                }
            }
        }
        let best = votes.iter().map(|v| v.1).max()?;
        votes.into_iter().find(|v| v.1 == best).map(|v| v.0.to_string())
    }

    /// Like [`rank`](Self::rank), with the `(input, output)` pairs the
    /// prompt showed.
    pub fn rank_with_examples(
        &self,
        prompt_key: &str,
        query: &str,
        options: &[String],
        examples: &[(String, String)],
    ) -> LlmRanking {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.seed, prompt_key.as_bytes()));
        let mut ranked = Vec::with_capacity(MAX_RANKED);
        let mut rest: Vec<String> = options.to_vec();
        if let Some(r) = self.recalled(query, options, examples) {
            rest.retain(|o| *o != r);
            ranked.push(r);
            rest.shuffle(&mut rng);
            ranked.extend(rest.into_iter().take(MAX_RANKED - 1));
            return LlmRanking { ranked };
        }
        let truth = self
            .truth_for(query)
            .filter(|t| options.iter().any(|o| o == t));
        if let Some(t) = truth {
            let correct = rng.random::<f64>() < self.accuracy;
            rest.retain(|o| *o != t);
            if correct || rest.is_empty() {
                ranked.push(t);
            } else {
                let wrong = rest.remove(rng.random_range(0..rest.len()));
                ranked.push(wrong);
                rest.push(t);
            }
        }
        rest.shuffle(&mut rng);
        ranked.extend(rest.into_iter().take(MAX_RANKED - ranked.len()));
        LlmRanking { ranked }
    }
}

struct ReadPrompt {
    options: Vec<String>,
    input: Option<String>,
    /// `(input, output)` from few-shot blocks and chat histories.
    examples: Vec<(String, String)>,
}

/// Pulls the options, examples and query input back out of a rendered prompt.
fn read_prompt(prompt: &str) -> ReadPrompt {
    let mut out = ReadPrompt {
        options: Vec::new(),
        input: None,
        examples: Vec::new(),
    };
    let mut section = "";
    let mut history: Option<String> = None;
    let mut pending: Option<String> = None;
    for line in prompt.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = match t {
                "[Options]" | "[Contacts]" => "options",
                "[Examples]" => "examples",
                "[Query]" => "query",
                _ => "",
            };
            history = t
                .strip_prefix("[History: ")
                .and_then(|h| h.strip_suffix(']'))
                .map(str::to_string);
            continue;
        }
        match section {
            "options" if !t.is_empty() => out.options.push(t.to_string()),
            "examples" => {
                if let Some(i) = line.strip_prefix("Input: ") {
                    pending = Some(i.to_string());
                } else if let Some(o) = line.strip_prefix("Output: ") {
                    if let Some(i) = pending.take() {
                        out.examples.push((i, o.trim().to_string()));
                    }
                }
            }
            "query" if out.input.is_none() => {
                if let Some(q) = line.strip_prefix("Input: ") {
                    out.input = Some(q.to_string());
                }
            }
            _ => {
                if let (Some(c), Some(m)) = (&history, line.strip_prefix("- ")) {
                    out.examples.push((m.to_string(), c.clone()));
                }
            }
        }
    }
    out
}

impl LlmBackend for ScriptedStubLlm {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let delay = match self.delay {
            StubDelay::None => Duration::ZERO,
            StubDelay::Simulated(d) | StubDelay::Sleep(d) => d,
        };
        if delay > timeout {
            if let StubDelay::Sleep(_) = self.delay {
                std::thread::sleep(timeout);
            }
            return Err(LlmError::Timeout(timeout.as_millis() as u64));
        }
        if let StubDelay::Sleep(d) = self.delay {
            std::thread::sleep(d);
        }
        match self.failure {
            Some(StubFailure::Transport) => {
                return Err(LlmError::Transport("stub endpoint is down".into()))
            }
            Some(StubFailure::RateLimited) => return Err(LlmError::RateLimited),
            None => {}
        }
        let text = match &self.fixed {
            Some(t) => t.clone(),
            None => {
                let p = read_prompt(prompt);
                render_ranking(&self.rank_with_examples(
                    prompt,
                    p.input.as_deref().unwrap_or(""),
                    &p.options,
                    &p.examples,
                ))
            }
        };
        Ok(LlmResponse {
            text,
            model_ms: delay.as_secs_f64() * 1e3,
            transport_ms: 0.0,
        })
    }
}
