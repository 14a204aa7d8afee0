use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_bayes, baseline_mfu, baseline_mru, HistoryEvent};
use super::metrics::{metrics, MetricsReport, Trial};
use super::synth::{StreamItem, SynthStream, SynthUser};
use super::EvalError;
use crate::config::{Config, FewShotSelection, RoutingMode};
use crate::llm::{ScriptedStubLlm, StubDelay};
use crate::memory::UsageRecord;
use crate::portal::{Portal, PredictRequest, Provenance, SelectRequest};

/// What a system served for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Served {
    pub request_id: Option<String>,
    pub ranking: Vec<String>,
    pub provenance: Option<Provenance>,
    pub llm_called: bool,
    pub llm_model_ms: f64,
    pub latency_ms: f64,
    pub model_ms: f64,
}

/// A system under evaluation.
pub trait Predictor {
    fn name(&self) -> &str;
    fn provision(&mut self, user: &SynthUser, at: DateTime<Utc>) -> Result<(), String>;
    fn predict(&mut self, item: &StreamItem) -> Result<Served, String>;
    /// Reports the true function for a served prediction.
    fn feedback(&mut self, item: &StreamItem, served: &Served) -> Result<(), String>;
    fn end_of_day(&mut self, _day: usize) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubSettings {
    pub seed: u64,
    pub accuracy: f64,
    /// Processing time the stub reports per call, without sleeping.
    pub delay_ms: f64,
    /// Let the stub copy the output of a shown example with the same text.
    pub recall: bool,
}

impl Default for StubSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            accuracy: 0.65,
            delay_ms: 200.0,
            recall: true,
        }
    }
}

impl StubSettings {
    pub fn build(&self) -> ScriptedStubLlm {
        let delay = if self.delay_ms > 0.0 {
            StubDelay::Simulated(Duration::from_secs_f64(self.delay_ms / 1e3))
        } else {
            StubDelay::None
        };
        ScriptedStubLlm::new(self.seed, self.accuracy)
            .with_delay(delay)
            .with_example_recall(self.recall)
    }
}

/// The portal with a scripted stub LLM that knows each query's truth.
pub struct PortalSystem {
    name: String,
    portal: Portal,
    stub: Arc<ScriptedStubLlm>,
}

impl PortalSystem {
    pub fn new(name: &str, cfg: Config, stub: &StubSettings, pool: Vec<UsageRecord>) -> Result<Self, EvalError> {
        let stub = Arc::new(stub.build());
        let portal = Portal::new(cfg)
            .map_err(|e| EvalError::Setup(e.to_string()))?
            .with_llm(stub.clone())
            .with_pool(pool);
        Ok(Self {
            name: name.to_string(),
            portal,
            stub,
        })
    }

    pub fn portal(&self) -> &Portal {
        &self.portal
    }

    pub fn stub(&self) -> &ScriptedStubLlm {
        &self.stub
    }
}

impl Predictor for PortalSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn provision(&mut self, user: &SynthUser, at: DateTime<Utc>) -> Result<(), String> {
        self.portal
            .provision(&user.user_id, Some(user.functions.clone()), at)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn predict(&mut self, item: &StreamItem) -> Result<Served, String> {
        self.stub.script(&item.query, &item.truth);
        let list = self
            .portal
            .predict(PredictRequest {
                user_id: item.user_id.clone(),
                text: item.query.clone(),
                context: item.context.clone(),
                request_id: None,
            })
            .map_err(|e| e.to_string())?;
        Ok(Served {
            request_id: Some(list.request_id),
            ranking: list.ranking,
            provenance: Some(list.provenance),
            llm_called: list.llm_called,
            llm_model_ms: list.llm_model_ms.unwrap_or(0.0),
            latency_ms: list.latency_ms,
            model_ms: list.model_ms,
        })
    }

    fn feedback(&mut self, item: &StreamItem, served: &Served) -> Result<(), String> {
        let Some(id) = &served.request_id else {
            return Err("nothing was served".into());
        };
        self.portal
            .select(SelectRequest {
                user_id: item.user_id.clone(),
                request_id: id.clone(),
                function_id: item.truth.clone(),
                satisfaction: None,
            })
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn end_of_day(&mut self, _day: usize) -> Result<(), String> {
        let errors: Vec<String> = self
            .portal
            .retrain_all()
            .into_iter()
            .filter_map(|(k, r)| r.err().map(|e| format!("{k}: {e}")))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mfu,
    Mru,
    Bayes,
}

/// Frequency, recency or naive Bayes ranking over each user's own history.
pub struct BaselineSystem {
    kind: BaselineKind,
    window_seconds: f64,
    collections: HashMap<String, Vec<String>>,
    history: HashMap<String, Vec<HistoryEvent>>,
}

impl BaselineSystem {
    pub fn new(kind: BaselineKind, window_seconds: f64) -> Self {
        Self {
            kind,
            window_seconds,
            collections: HashMap::new(),
            history: HashMap::new(),
        }
    }

    fn apps(&self, item: &StreamItem) -> Vec<String> {
        item.context
            .recent_apps(self.window_seconds)
            .into_iter()
            .map(str::to_string)
            .collect()
    }
}

impl Predictor for BaselineSystem {
    fn name(&self) -> &str {
        match self.kind {
            BaselineKind::Mfu => "mfu",
            BaselineKind::Mru => "mru",
            BaselineKind::Bayes => "bayes",
        }
    }

    fn provision(&mut self, user: &SynthUser, _at: DateTime<Utc>) -> Result<(), String> {
        self.collections
            .insert(user.user_id.clone(), user.functions.iter().map(|f| f.id.clone()).collect());
        self.history.entry(user.user_id.clone()).or_default();
        Ok(())
    }

    fn predict(&mut self, item: &StreamItem) -> Result<Served, String> {
        let start = Instant::now();
        let candidates = self
            .collections
            .get(&item.user_id)
            .ok_or_else(|| format!("unknown user {}", item.user_id))?;
        let history = self.history.get(&item.user_id).map(Vec::as_slice).unwrap_or_default();
        let ranking = match self.kind {
            BaselineKind::Mfu => baseline_mfu(history, candidates),
            BaselineKind::Mru => baseline_mru(history, candidates),
            BaselineKind::Bayes => baseline_bayes(history, &self.apps(item), candidates),
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Served {
            request_id: None,
            ranking,
            provenance: None,
            llm_called: false,
            llm_model_ms: 0.0,
            latency_ms: ms,
            model_ms: ms,
        })
    }

    fn feedback(&mut self, item: &StreamItem, _served: &Served) -> Result<(), String> {
        let apps = self.apps(item);
        self.history.entry(item.user_id.clone()).or_default().push(HistoryEvent {
            function_id: item.truth.clone(),
            at: item.context.utc(),
            apps,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub system: String,
    pub trials: Vec<Trial>,
    pub report: MetricsReport,
    /// Failures outside any single trial, such as a nightly retrain.
    pub warnings: Vec<String>,
}

/// Feeds every query to the system in time order, scores the served ranking
/// against the truth, then reports the truth back. The collection of every
/// user is provisioned at the start of the first day, and `end_of_day` runs
/// after each day. Failures are recorded per trial; the run never aborts.
pub fn replay(stream: &SynthStream, system: &mut dyn Predictor) -> Result<ReplayOutput, EvalError> {
    stream.validate()?;
    let start = stream.start();
    for u in &stream.users {
        system
            .provision(u, start)
            .map_err(|e| EvalError::Setup(format!("provisioning {}: {e}", u.user_id)))?;
    }
    let sizes: HashMap<&str, usize> = stream
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), u.functions.len()))
        .collect();
    let mut trials = Vec::with_capacity(stream.items.len());
    let mut warnings = Vec::new();
    let mut day = stream.items.first().map_or(0, |i| i.day);
    for (index, item) in stream.items.iter().enumerate() {
        while item.day > day {
            if let Err(e) = system.end_of_day(day) {
                warnings.push(format!("end of day {day}: {e}"));
            }
            day += 1;
        }
        let mut trial = Trial {
            index,
            user_id: item.user_id.clone(),
            day: item.day,
            query: item.query.clone(),
            context: item.context.clone(),
            truth: item.truth.clone(),
            ranking: Vec::new(),
            candidates: sizes[item.user_id.as_str()],
            provenance: None,
            llm_called: false,
            llm_model_ms: 0.0,
            error: None,
            latency_ms: 0.0,
            model_ms: 0.0,
        };
        match system.predict(item) {
            Ok(served) => {
                if let Err(e) = system.feedback(item, &served) {
                    warnings.push(format!("trial {index}: feedback failed: {e}"));
                }
                trial.ranking = served.ranking;
                trial.provenance = served.provenance;
                trial.llm_called = served.llm_called;
                trial.llm_model_ms = served.llm_model_ms;
                trial.latency_ms = served.latency_ms;
                trial.model_ms = served.model_ms;
            }
            Err(e) => trial.error = Some(e),
        }
        trials.push(trial);
    }
    let report = metrics(&trials)?;
    Ok(ReplayOutput {
        system: system.name().to_string(),
        trials,
        report,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// One store shared by all users, T = 0.97, no same-user boost.
    General,
    /// Context blocks zeroed.
    NoContext,
    /// Every query to the LLM with randomly drawn examples.
    LlmOnly,
    /// The integrator always, never the LLM.
    BertOnly,
    Mfu,
    Mru,
    Bayes,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::General,
        Variant::NoContext,
        Variant::LlmOnly,
        Variant::BertOnly,
        Variant::Mfu,
        Variant::Mru,
        Variant::Bayes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::General => "general",
            Variant::NoContext => "nocontext",
            Variant::LlmOnly => "llm-only",
            Variant::BertOnly => "bert-only",
            Variant::Mfu => "mfu",
            Variant::Mru => "mru",
            Variant::Bayes => "bayes",
        }
    }

    /// Portal configuration for this variant; `None` for baselines.
    pub fn config(self, base: &Config) -> Option<Config> {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::General => {
                cfg.routing.shared_store = true;
                cfg.routing.threshold = 0.97;
                cfg.routing.user_weight = 1.0;
            }
            Variant::NoContext => cfg.context = cfg.context.text_only(),
            Variant::LlmOnly => {
                cfg.routing.mode = RoutingMode::LlmOnly;
                cfg.routing.few_shot = FewShotSelection::Random;
            }
            Variant::BertOnly => cfg.routing.mode = RoutingMode::LocalOnly,
            Variant::Mfu | Variant::Mru | Variant::Bayes => return None,
        }
        Some(cfg)
    }

    pub fn system(self, base: &Config, stub: &StubSettings, pool: Vec<UsageRecord>) -> Result<Box<dyn Predictor + Send>, EvalError> {
        let window = base.context.window_seconds;
        Ok(match self {
            Variant::Mfu => Box::new(BaselineSystem::new(BaselineKind::Mfu, window)),
            Variant::Mru => Box::new(BaselineSystem::new(BaselineKind::Mru, window)),
            Variant::Bayes => Box::new(BaselineSystem::new(BaselineKind::Bayes, window)),
            v => Box::new(PortalSystem::new(
                v.name(),
                v.config(base).expect("portal variant"),
                stub,
                pool,
            )?),
        })
    }
}

impl FromStr for Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EvalError::UnknownVariant(s.to_string()))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Replays the stream once per variant, always including the full system
/// (first in the output). Variants run on separate threads.
pub fn run_ablation(
    base: &Config,
    stream: &SynthStream,
    stub: &StubSettings,
    variants: &[Variant],
) -> Result<Vec<ReplayOutput>, EvalError> {
    stream.validate()?;
    let mut todo = vec![Variant::Full];
    for v in variants {
        if !todo.contains(v) {
            todo.push(*v);
        }
    }
    let pool = stream.pool_records();
    std::thread::scope(|s| {
        let handles: Vec<_> = todo
            .iter()
            .map(|v| {
                let pool = pool.clone();
                s.spawn(move || {
                    let mut sys = v.system(base, stub, pool)?;
                    replay(stream, sys.as_mut())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| EvalError::Setup("variant thread panicked".into()))?)
            .collect()
    })
}
