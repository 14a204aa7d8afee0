//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists (via the `json` module), so they match the HTTP API shapes.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{Local, Utc};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use textroute_core::config::Config;
use textroute_core::encoder::{normalize_text as normalize, ContextSnapshot, HashEncoder, TextEncoder};
use textroute_core::eval::{self, StubSettings, SynthConfig, Variant};
use textroute_core::integrator::{self, Route};
use textroute_core::llm::{self, LlmRanking, ScriptedStubLlm};
use textroute_core::memory::{self, FunctionDescriptor, LabelVector};
use textroute_core::portal::{Portal as CorePortal, PortalError, PredictRequest, SelectRequest};
use textroute_core::trainer;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn portal_err(e: PortalError) -> PyErr {
    match e {
        PortalError::UnknownUser(_) | PortalError::UnknownRequest(_) | PortalError::UnknownFunction(_) => {
            PyKeyError::new_err(e.to_string())
        }
        PortalError::Io(_) => PyRuntimeError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(value_err)
}

fn context_or_now(ctx: Option<&Bound<'_, PyAny>>) -> PyResult<ContextSnapshot> {
    match ctx {
        Some(c) if !c.is_none() => from_py(c),
        _ => Ok(ContextSnapshot::at(Local::now().fixed_offset())),
    }
}

/// Lowercased, whitespace-collapsed form used before hashing.
#[pyfunction]
fn normalize_text(text: &str) -> String {
    normalize(text)
}

/// Hashed character-trigram vector of `text`, unit length (or all zero).
#[pyfunction]
#[pyo3(signature = (text, dim = 256, seed = 0))]
fn encode_text(text: &str, dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(HashEncoder::new(dim, seed).encode(text).map_err(value_err)?.0)
}

/// Similarity-weighted average of `(similarity, label)` pairs.
#[pyfunction]
fn integrate(neighbors: Vec<(f64, BTreeMap<String, f64>)>) -> PyResult<BTreeMap<String, f64>> {
    let labels: Vec<(f64, LabelVector)> = neighbors.into_iter().map(|(s, l)| (s, LabelVector(l))).collect();
    let out = integrator::integrate(labels.iter().map(|(s, l)| (*s, l))).map_err(value_err)?;
    Ok(out.0)
}

#[pyfunction]
fn confidence(similarities: Vec<f64>) -> PyResult<f64> {
    integrator::confidence(&similarities).map_err(value_err)
}

/// `"local"` or `"llm"`.
#[pyfunction]
#[pyo3(signature = (confidence, threshold = 0.95))]
fn route(confidence: f64, threshold: f64) -> &'static str {
    match integrator::route(confidence, threshold).route {
        Route::Local => "local",
        Route::Llm => "llm",
    }
}

#[pyfunction]
#[pyo3(signature = (similarities, k = 3, threshold = 0.95))]
fn decide(similarities: Vec<f64>, k: usize, threshold: f64) -> (&'static str, f64) {
    let d = integrator::decide(&similarities, k, threshold);
    let r = match d.route {
        Route::Local => "local",
        Route::Llm => "llm",
    };
    (r, d.confidence)
}

/// Stored label for a selection, optionally fused with the LLM's ranking.
#[pyfunction]
#[pyo3(signature = (selected, known, llm_ranking = None))]
fn fuse_label(selected: &str, known: Vec<String>, llm_ranking: Option<Vec<String>>) -> PyResult<BTreeMap<String, f64>> {
    let ranking = llm_ranking.map(|ranked| LlmRanking { ranked });
    Ok(trainer::fuse_label(selected, &known, ranking.as_ref()).map_err(value_err)?.0)
}

#[pyfunction]
fn largest_remainder(total: usize, weights: Vec<f64>) -> Vec<usize> {
    memory::largest_remainder(total, &weights)
}

/// Parses an LLM answer into at most five known candidates. Raises
/// `ValueError` when nothing usable is found.
#[pyfunction]
fn parse_ranking(raw: &str, candidates: Vec<String>) -> PyResult<Vec<String>> {
    Ok(llm::parse_ranking(raw, &candidates).map_err(value_err)?.ranked)
}

#[pyfunction]
fn render_ranking(ranked: Vec<String>) -> String {
    llm::render_ranking(&LlmRanking { ranked })
}

/// Hit@1, Hit@5, MRR and per-day figures for a trials JSONL file.
#[pyfunction]
fn metrics_from_jsonl(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let trials = eval::read_trials_jsonl(&path).map_err(value_err)?;
    let report = eval::metrics(&trials).map_err(value_err)?;
    to_py(py, &report)
}

/// Generates a synthetic query stream. Keyword arguments override the
/// generator defaults (`seed`, `users`, `days`, `queries_per_day`, ...).
#[pyfunction]
#[pyo3(signature = (**overrides))]
fn synth_stream(py: Python<'_>, overrides: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg = synth_config(overrides)?;
    let stream = py.detach(|| eval::synth_stream(&cfg)).map_err(value_err)?;
    to_py(py, &stream)
}

fn synth_config(overrides: Option<&Bound<'_, PyAny>>) -> PyResult<SynthConfig> {
    match overrides {
        Some(o) => from_py(o),
        None => Ok(SynthConfig::default()),
    }
}

/// Replays a synthetic stream through the full system and each named
/// variant. Returns one metrics report per system, full first.
#[pyfunction]
#[pyo3(signature = (variants = Vec::new(), stream = None, stub = None, config = None, out_dir = None))]
fn run_ablation(
    py: Python<'_>,
    variants: Vec<String>,
    stream: Option<&Bound<'_, PyAny>>,
    stub: Option<&Bound<'_, PyAny>>,
    config: Option<&str>,
    out_dir: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let variants = variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let cfg = synth_config(stream)?;
    let stub: StubSettings = match stub {
        Some(s) => {
            let mut v = serde_json::to_value(StubSettings::default()).map_err(value_err)?;
            let patch: serde_json::Map<String, serde_json::Value> = from_py(s)?;
            for (k, x) in patch {
                v[k] = x;
            }
            serde_json::from_value(v).map_err(value_err)?
        }
        None => StubSettings::default(),
    };
    let base = parse_config(config)?;
    let outs = py
        .detach(|| {
            let stream = eval::synth_stream(&cfg)?;
            let outs = eval::run_ablation(&base, &stream, &stub, &variants)?;
            if let Some(dir) = &out_dir {
                eval::write_outputs(dir, &outs)?;
            }
            Ok::<_, eval::EvalError>(outs)
        })
        .map_err(value_err)?;
    let reports: BTreeMap<&str, _> = outs.iter().map(|o| (o.system.as_str(), &o.report)).collect();
    let order: Vec<&str> = outs.iter().map(|o| o.system.as_str()).collect();
    to_py(py, &serde_json::json!({ "order": order, "reports": reports }))
}

fn parse_config(toml: Option<&str>) -> PyResult<Config> {
    match toml {
        Some(s) => Config::from_toml_str(s).map_err(value_err),
        None => Ok(Config::default()),
    }
}

#[derive(serde::Deserialize)]
struct FunctionSpec {
    app: String,
    action: String,
    #[serde(default)]
    contact: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

impl FunctionSpec {
    fn descriptor(self) -> FunctionDescriptor {
        let mut f = match &self.contact {
            Some(c) => FunctionDescriptor::chat(&self.app, c),
            None => FunctionDescriptor::new(&self.app, &self.action),
        };
        f.description = self.description;
        f
    }
}

/// The prediction service, in process. Without `stub_accuracy` the LLM is
/// whatever the configuration names; with it, a seeded scripted stub.
#[pyclass(name = "Portal", frozen)]
struct Portal {
    inner: CorePortal,
    stub: Option<Arc<ScriptedStubLlm>>,
}

impl Portal {
    fn scripted(&self) -> PyResult<&ScriptedStubLlm> {
        self.stub
            .as_deref()
            .ok_or_else(|| PyRuntimeError::new_err("portal has no scripted stub"))
    }
}

#[pymethods]
impl Portal {
    #[new]
    #[pyo3(signature = (config = None, stub_accuracy = None, stub_seed = 42, data_dir = None))]
    fn new(config: Option<&str>, stub_accuracy: Option<f64>, stub_seed: u64, data_dir: Option<PathBuf>) -> PyResult<Self> {
        let mut cfg = parse_config(config)?;
        if data_dir.is_some() {
            cfg.portal.data_dir = data_dir;
        }
        match stub_accuracy {
            Some(p) => {
                cfg.llm.enabled = false;
                let stub = Arc::new(ScriptedStubLlm::new(stub_seed, p));
                let inner = CorePortal::from_config(cfg).map_err(portal_err)?.with_llm(stub.clone());
                Ok(Self { inner, stub: Some(stub) })
            }
            None => Ok(Self {
                inner: CorePortal::from_config(cfg).map_err(portal_err)?,
                stub: None,
            }),
        }
    }

    /// Makes the stub's true answer for exactly `query` be `truth`.
    fn script(&self, query: &str, truth: &str) -> PyResult<()> {
        self.scripted()?.script(query, truth);
        Ok(())
    }

    /// Same, for every query containing `pattern`.
    fn rule(&self, pattern: &str, truth: &str) -> PyResult<()> {
        self.scripted()?.add_rule(pattern, truth);
        Ok(())
    }

    fn llm_calls(&self) -> usize {
        self.stub.as_ref().map_or(0, |s| s.calls())
    }

    #[pyo3(signature = (user_id, functions = None))]
    fn provision(&self, py: Python<'_>, user_id: &str, functions: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let fs = match functions {
            Some(f) => {
                let specs: Vec<FunctionSpec> = from_py(f)?;
                Some(specs.into_iter().map(FunctionSpec::descriptor).collect())
            }
            None => None,
        };
        let out = py.detach(|| self.inner.provision(user_id, fs, Utc::now())).map_err(portal_err)?;
        to_py(py, &out)
    }

    fn users(&self) -> Vec<String> {
        self.inner.users()
    }

    /// Ranked prediction list for `text`. `context` is a dict with `now`
    /// (RFC 3339) and optional `launches`; it defaults to the local time.
    #[pyo3(signature = (user_id, text, context = None, request_id = None))]
    fn predict(
        &self,
        py: Python<'_>,
        user_id: &str,
        text: &str,
        context: Option<&Bound<'_, PyAny>>,
        request_id: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let req = PredictRequest {
            user_id: user_id.to_string(),
            text: text.to_string(),
            context: context_or_now(context)?,
            request_id,
        };
        let out = py.detach(|| self.inner.predict(req)).map_err(portal_err)?;
        to_py(py, &out)
    }

    #[pyo3(signature = (user_id, request_id, function_id, satisfaction = None))]
    fn select(
        &self,
        py: Python<'_>,
        user_id: &str,
        request_id: &str,
        function_id: &str,
        satisfaction: Option<u8>,
    ) -> PyResult<Py<PyAny>> {
        let req = SelectRequest {
            user_id: user_id.to_string(),
            request_id: request_id.to_string(),
            function_id: function_id.to_string(),
            satisfaction,
        };
        let out = py.detach(|| self.inner.select(req)).map_err(portal_err)?;
        to_py(py, &out)
    }

    fn functions(&self, py: Python<'_>, user_id: &str) -> PyResult<Py<PyAny>> {
        let out = py.detach(|| self.inner.list_functions(user_id, Utc::now())).map_err(portal_err)?;
        to_py(py, &out)
    }

    #[pyo3(signature = (user_id, app, action, contact = None, description = None))]
    fn add_function(
        &self,
        py: Python<'_>,
        user_id: &str,
        app: String,
        action: String,
        contact: Option<String>,
        description: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let f = FunctionSpec {
            app,
            action,
            contact,
            description,
        }
        .descriptor();
        let out = py.detach(|| self.inner.add_function(user_id, f, Utc::now())).map_err(portal_err)?;
        to_py(py, &out)
    }

    fn remove_function(&self, py: Python<'_>, user_id: &str, function_id: &str) -> PyResult<Py<PyAny>> {
        let out = py.detach(|| self.inner.remove_function(user_id, function_id)).map_err(portal_err)?;
        to_py(py, &out)
    }

    fn records(&self, user_id: &str) -> PyResult<usize> {
        self.inner
            .record_count(user_id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown user {user_id}")))
    }

    /// Retrains one user, or everyone when `user_id` is omitted.
    #[pyo3(signature = (user_id = None))]
    fn retrain(&self, py: Python<'_>, user_id: Option<&str>) -> PyResult<Py<PyAny>> {
        match user_id {
            Some(u) => {
                let rep = py.detach(|| self.inner.retrain(u)).map_err(portal_err)?;
                to_py(py, &rep)
            }
            None => {
                let all = py.detach(|| self.inner.retrain_all());
                let mut reports = BTreeMap::new();
                let mut errors = HashMap::new();
                for (u, r) in all {
                    match r {
                        Ok(rep) => {
                            reports.insert(u, rep);
                        }
                        Err(e) => {
                            errors.insert(u, e.to_string());
                        }
                    }
                }
                to_py(py, &serde_json::json!({ "reports": reports, "errors": errors }))
            }
        }
    }

    fn save_all(&self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.inner.save_all()).map_err(portal_err)
    }

    fn load_saved(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        py.detach(|| self.inner.load_saved()).map_err(portal_err)
    }
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(encode_text, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_label, m)?)?;
    m.add_function(wrap_pyfunction!(largest_remainder, m)?)?;
    m.add_function(wrap_pyfunction!(parse_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(render_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(synth_stream, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    m.add_class::<Portal>()?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}

#[pymodule]
fn textroute(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
