//! The serving pipeline: gate, retrieval, integrator, confidence routing
//! and LLM fallback, plus feedback ingestion and collection management.

pub mod collection;
pub mod exec;
pub mod filter;
pub mod http;
pub mod telemetry;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, FewShotSelection, RoutingMode};
use crate::encoder::{sigmoid, ContextSnapshot, EncoderError, FeatureVector, Featurizer, TIME_DIM};
use crate::integrator::{decide, integrate_neighbors, Route};
use crate::llm::{
    build_contact_prompt, build_function_prompt, parse_ranking, query, stable_hash, synthetic_queries,
    template_queries, AuditedLlm, HttpLlm, LlmBackend, LlmError, LlmRanking,
};
use crate::memory::{
    self, bootstrap, FunctionDescriptor, LabelVector, MemoryError, Origin, PersonalDatabase,
    RecordFilter, RecordId, UsageRecord,
};
use crate::trainer::{fuse_label, insert_gate_columns, retrain, ModelParams, RetrainReport, TrainerError};

pub use collection::default_collection;
pub use exec::{ExecutionAdapter, RecordingExecutor};
pub use filter::{parse_override, OverrideFilter};
pub use telemetry::{Telemetry, TelemetryEvent};

pub const MAX_ENTRIES: usize = 5;
const SERVED_CAPACITY: usize = 10_000;
const SHARED_STORE: &str = "shared";

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("request {0} already has a selection")]
    DuplicateSelection(String),
    #[error("function {0} is already in the collection")]
    DuplicateFunction(String),
    #[error("cannot remove the last function")]
    LastFunction,
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for PortalError {
    fn from(e: std::io::Error) -> Self {
        PortalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Local,
    Llm,
    FallbackFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub user_id: String,
    pub text: String,
    pub context: ContextSnapshot,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub function_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionList {
    pub request_id: String,
    /// At most five candidates, rank 1 first.
    pub entries: Vec<RankedEntry>,
    pub provenance: Provenance,
    pub confidence: f64,
    /// Whether the chat candidate set was used.
    pub chat: bool,
    pub llm_called: bool,
    pub filter: Option<OverrideFilter>,
    /// The whole collection: candidates in served order, then everything
    /// the gate or filter excluded, by frequency.
    pub ranking: Vec<String>,
    /// Wall time of the whole request.
    pub latency_ms: f64,
    /// Local computation plus the LLM's own processing time.
    pub model_ms: f64,
    /// Time spent moving LLM requests over the network.
    pub transport_ms: f64,
    /// Processing time reported by the LLM, if it answered.
    pub llm_model_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRequest {
    pub user_id: String,
    pub request_id: String,
    pub function_id: String,
    #[serde(default)]
    pub satisfaction: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectAck {
    pub request_id: String,
    pub record_id: Option<RecordId>,
    pub label: LabelVector,
    pub executed: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionUsage {
    pub count: u64,
    pub last_used: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub user_id: String,
    pub collection: Vec<FunctionDescriptor>,
    pub usage: BTreeMap<String, FunctionUsage>,
    pub satisfaction: Vec<(String, u8)>,
    pub next_request: u64,
}

impl Profile {
    fn new(user_id: &str, collection: Vec<FunctionDescriptor>) -> Self {
        Self {
            user_id: user_id.to_string(),
            collection,
            usage: BTreeMap::new(),
            satisfaction: Vec::new(),
            next_request: 0,
        }
    }

    fn function(&self, id: &str) -> Option<&FunctionDescriptor> {
        self.collection.iter().find(|f| f.id == id)
    }
}

struct Served {
    llm_ranking: Option<LlmRanking>,
    query: String,
    context: ContextSnapshot,
    selected: bool,
}

struct UserState {
    profile: Profile,
    served: HashMap<String, Served>,
    order: VecDeque<String>,
}

struct UserSlot {
    state: Mutex<UserState>,
    store: Arc<Store>,
}

/// A record database with the parameters trained on it.
struct Store {
    key: String,
    db: RwLock<PersonalDatabase>,
    params: RwLock<Arc<ModelParams>>,
    /// Function ids the head is trained over.
    functions: RwLock<Vec<String>>,
    retrain: Mutex<()>,
}

impl Store {
    fn params(&self) -> Arc<ModelParams> {
        self.params.read().clone()
    }
}

/// Outcome of the ranking step before it is turned into a list.
struct Ranked {
    scores: HashMap<String, f64>,
    provenance: Provenance,
    llm_ranking: Option<LlmRanking>,
}

pub struct Portal {
    cfg: Config,
    featurizer: Featurizer,
    llm: Option<Arc<dyn LlmBackend>>,
    exec: Arc<dyn ExecutionAdapter>,
    telemetry: Telemetry,
    pool: Vec<UsageRecord>,
    users: RwLock<HashMap<String, Arc<UserSlot>>>,
    stores: RwLock<HashMap<String, Arc<Store>>>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// File-system safe rendering of an id.
fn path_key(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c.to_string()
            } else {
                format!("%{:02X}", c as u32)
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct PoolLine {
    user_id: String,
    query: String,
    context: ContextSnapshot,
    chosen: String,
    timestamp: DateTime<Utc>,
    #[serde(default)]
    label: Option<LabelVector>,
}

/// Reads bootstrap pool records (one JSON object per line with `user_id`,
/// `query`, `context`, `chosen`, `timestamp`). Features are left empty; they
/// are computed per user when the records are bootstrapped.
pub fn read_pool(path: &Path) -> Result<Vec<UsageRecord>, PortalError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PoolLine = serde_json::from_str(line)
            .map_err(|e| PortalError::InvalidRequest(format!("pool line {}: {e}", i + 1)))?;
        out.push(UsageRecord {
            id: i as RecordId,
            user_id: p.user_id,
            query: p.query,
            feature: FeatureVector(Vec::new()),
            context: p.context,
            label: p.label.unwrap_or_else(|| LabelVector::one_hot(&p.chosen)),
            chosen: p.chosen,
            chat: false,
            timestamp: p.timestamp,
            origin: Origin::Live,
        })
    }
    Ok(out)
}

impl Portal {
    pub fn new(cfg: Config) -> Result<Self, PortalError> {
        let featurizer = Featurizer::from_config(&cfg.encoder, &cfg.context)?;
        let telemetry = Telemetry::new(cfg.portal.telemetry_capacity);
        Ok(Self {
            cfg,
            featurizer,
            llm: None,
            exec: Arc::new(RecordingExecutor::new()),
            telemetry,
            pool: Vec::new(),
            users: RwLock::new(HashMap::new()),
            stores: RwLock::new(HashMap::new()),
        })
    }

    /// Builds a portal with everything the configuration names: the HTTP
    /// LLM client (with audit log), telemetry log and bootstrap pool.
    pub fn from_config(cfg: Config) -> Result<Self, PortalError> {
        let mut portal = Self::new(cfg.clone())?;
        if cfg.llm.enabled {
            let http = HttpLlm::from_config(&cfg.llm).map_err(|e| PortalError::InvalidRequest(e.to_string()))?;
            let secret = http.api_key().map(str::to_string);
            let mut audited = AuditedLlm::new(Arc::new(http));
            if let Some(s) = secret {
                audited = audited.with_secret(s);
            }
            if let Some(path) = &cfg.llm.audit_log {
                audited = audited.with_log_file(path)?;
            }
            portal.llm = Some(Arc::new(audited));
        }
        if let Some(path) = &cfg.portal.telemetry_log {
            portal.telemetry = Telemetry::new(cfg.portal.telemetry_capacity).with_log_file(path)?;
        }
        if let Some(path) = &cfg.portal.global_pool {
            portal.pool = read_pool(path)?;
        }
        Ok(portal)
    }

    pub fn with_llm(mut self, llm: Arc<dyn LlmBackend>) -> Self {
        self.llm = Some(llm);
        self
    }

    pub fn with_executor(mut self, exec: Arc<dyn ExecutionAdapter>) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_pool(mut self, pool: Vec<UsageRecord>) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_telemetry(mut self, telemetry: Telemetry) -> Self {
        self.telemetry = telemetry;
        self
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn users(&self) -> Vec<String> {
        let mut u: Vec<String> = self.users.read().keys().cloned().collect();
        u.sort();
        u
    }

    pub fn has_user(&self, user_id: &str) -> bool {
        self.users.read().contains_key(user_id)
    }

    fn store_key(&self, user_id: &str) -> String {
        if self.cfg.routing.shared_store {
            SHARED_STORE.to_string()
        } else {
            user_id.to_string()
        }
    }

    fn store_dir(&self, key: &str) -> Option<PathBuf> {
        self.cfg.portal.data_dir.as_ref().map(|d| d.join("stores").join(path_key(key)))
    }

    fn profile_path(&self, user_id: &str) -> Option<PathBuf> {
        self.cfg
            .portal
            .data_dir
            .as_ref()
            .map(|d| d.join("profiles").join(format!("{}.json", path_key(user_id))))
    }

    fn open_store(&self, key: &str) -> Result<Arc<Store>, PortalError> {
        if let Some(s) = self.stores.read().get(key) {
            return Ok(s.clone());
        }
        let mut stores = self.stores.write();
        if let Some(s) = stores.get(key) {
            return Ok(s.clone());
        }
        let mut db = PersonalDatabase::new(key);
        let mut params = None;
        let mut functions = Vec::new();
        if let Some(dir) = self.store_dir(key) {
            if dir.join("manifest.json").exists() {
                let (loaded, extras) = memory::load(&dir)?;
                db = loaded;
                if let Some(bytes) = extras.get("params") {
                    let p: ModelParams = serde_json::from_slice(bytes)
                        .map_err(|e| MemoryError::CorruptSnapshot(format!("params: {e}")))?;
                    functions = p.head.functions.clone();
                    params = Some(p);
                }
            }
        }
        let dim = self.featurizer.feature_dim(db.app_vocab().len());
        let params = params.unwrap_or_else(|| ModelParams::untrained(&functions, dim));
        let store = Arc::new(Store {
            key: key.to_string(),
            db: RwLock::new(db),
            params: RwLock::new(Arc::new(params)),
            functions: RwLock::new(functions),
            retrain: Mutex::new(()),
        });
        stores.insert(key.to_string(), store.clone());
        Ok(store)
    }

    fn persist_store(&self, store: &Store, incremental: bool) -> Result<(), PortalError> {
        let Some(dir) = self.store_dir(&store.key) else {
            return Ok(());
        };
        fs::create_dir_all(&dir)?;
        let params = serde_json::to_vec(&*store.params()).expect("params serialize");
        let db = store.db.read();
        if incremental {
            memory::append_to_snapshot(&db, &dir, &[("params", params)])?;
        } else {
            memory::save(&db, &dir, &[("params", params)])?;
        }
        Ok(())
    }

    fn persist_profile(&self, profile: &Profile) -> Result<(), PortalError> {
        let Some(path) = self.profile_path(&profile.user_id) else {
            return Ok(());
        };
        let dir = path.parent().expect("profile path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(profile).expect("profile serializes"))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Writes full snapshots of every store and profile.
    pub fn save_all(&self) -> Result<(), PortalError> {
        let stores: Vec<Arc<Store>> = self.stores.read().values().cloned().collect();
        for s in stores {
            self.persist_store(&s, false)?;
        }
        let slots: Vec<Arc<UserSlot>> = self.users.read().values().cloned().collect();
        for slot in slots {
            self.persist_profile(&slot.state.lock().profile)?;
        }
        Ok(())
    }

    /// Adds apps seen in a context to the store vocabulary, recomputing
    /// stored features and widening the parameters when it grows.
    fn observe_apps<'a>(&self, store: &Store, apps: impl IntoIterator<Item = &'a str>) -> Result<(), PortalError> {
        let apps: Vec<&str> = apps.into_iter().collect();
        {
            let db = store.db.read();
            if apps.iter().all(|a| db.app_vocab().iter().any(|v| v == a)) {
                return Ok(());
            }
        }
        let mut db = store.db.write();
        if !db.extend_vocab(apps) {
            return Ok(());
        }
        let featurizer = &self.featurizer;
        db.refeaturize(|r, vocab| featurizer.featurize(&r.query, &r.context, vocab))?;
        let dim = featurizer.feature_dim(db.app_vocab().len());
        drop(db);
        self.widen_params(store, dim);
        Ok(())
    }

    fn widen_params(&self, store: &Store, dim: usize) {
        let mut guard = store.params.write();
        let old = guard.head.dim;
        if old >= dim {
            return;
        }
        let mut p = (**guard).clone();
        let at = old - TIME_DIM;
        p.head.insert_columns(at, dim - old);
        insert_gate_columns(&mut p.gate, at, dim - old);
        *guard = Arc::new(p);
    }

    fn add_head_functions(&self, store: &Store, ids: &[String]) {
        {
            let mut fs = store.functions.write();
            for id in ids {
                if !fs.contains(id) {
                    fs.push(id.clone());
                }
            }
        }
        let mut guard = store.params.write();
        let mut p = (**guard).clone();
        let mut changed = false;
        for id in ids {
            changed |= p.head.add_function(id);
        }
        if changed {
            *guard = Arc::new(p);
        }
    }

    fn slot(&self, user_id: &str) -> Option<Arc<UserSlot>> {
        self.users.read().get(user_id).cloned()
    }

    fn slot_or_provision(&self, user_id: &str, at: DateTime<Utc>) -> Result<Arc<UserSlot>, PortalError> {
        if let Some(s) = self.slot(user_id) {
            return Ok(s);
        }
        if let Some(s) = self.load_user(user_id)? {
            return Ok(s);
        }
        if !self.cfg.portal.auto_provision {
            return Err(PortalError::UnknownUser(user_id.to_string()));
        }
        self.provision(user_id, None, at)?;
        self.slot(user_id).ok_or_else(|| PortalError::UnknownUser(user_id.to_string()))
    }

    /// Loads every user saved under the data directory and returns their ids.
    pub fn load_saved(&self) -> Result<Vec<String>, PortalError> {
        let Some(dir) = self.cfg.portal.data_dir.as_ref().map(|d| d.join("profiles")) else {
            return Ok(Vec::new());
        };
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let profile: Profile = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| PortalError::Io(format!("{}: {e}", path.display())))?;
                if self.load_user(&profile.user_id)?.is_some() {
                    ids.push(profile.user_id);
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn load_user(&self, user_id: &str) -> Result<Option<Arc<UserSlot>>, PortalError> {
        let Some(path) = self.profile_path(user_id) else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let profile: Profile = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| PortalError::Io(format!("{}: {e}", path.display())))?;
        let store = self.open_store(&self.store_key(user_id))?;
        let mut users = self.users.write();
        let slot = users
            .entry(user_id.to_string())
            .or_insert_with(|| {
                Arc::new(UserSlot {
                    state: Mutex::new(UserState {
                        profile,
                        served: HashMap::new(),
                        order: VecDeque::new(),
                    }),
                    store,
                })
            })
            .clone();
        Ok(Some(slot))
    }

    /// Creates a user with the given collection (the default one when
    /// `None`), bootstraps their store and trains initial parameters. An
    /// existing user is left unchanged.
    pub fn provision(
        &self,
        user_id: &str,
        functions: Option<Vec<FunctionDescriptor>>,
        at: DateTime<Utc>,
    ) -> Result<Vec<FunctionDescriptor>, PortalError> {
        if user_id.trim().is_empty() {
            return Err(PortalError::InvalidRequest("empty user id".into()));
        }
        if let Some(s) = self.slot(user_id) {
            return Ok(s.state.lock().profile.collection.clone());
        }
        if let Some(s) = self.load_user(user_id)? {
            return Ok(s.state.lock().profile.collection.clone());
        }
        let collection = functions.unwrap_or_else(default_collection);
        if collection.is_empty() {
            return Err(PortalError::InvalidRequest("empty function collection".into()));
        }
        for (i, f) in collection.iter().enumerate() {
            f.validate()?;
            if collection[..i].iter().any(|g| g.id == f.id) {
                return Err(PortalError::DuplicateFunction(f.id.clone()));
            }
        }
        let store = self.open_store(&self.store_key(user_id))?;
        self.observe_apps(&store, collection.iter().map(|f| f.app.as_str()))?;
        let ids: Vec<String> = collection.iter().map(|f| f.id.clone()).collect();
        self.add_head_functions(&store, &ids);
        if self.cfg.routing.bootstrap {
            self.bootstrap_into(&store, user_id, &collection, at)?;
        }
        let slot = Arc::new(UserSlot {
            state: Mutex::new(UserState {
                profile: Profile::new(user_id, collection.clone()),
                served: HashMap::new(),
                order: VecDeque::new(),
            }),
            store: store.clone(),
        });
        {
            let mut users = self.users.write();
            if let Some(existing) = users.get(user_id) {
                return Ok(existing.state.lock().profile.collection.clone());
            }
            users.insert(user_id.to_string(), slot.clone());
        }
        self.retrain_store(&store)?;
        self.persist_profile(&slot.state.lock().profile)?;
        Ok(collection)
    }

    fn bootstrap_into(
        &self,
        store: &Store,
        user_id: &str,
        collection: &[FunctionDescriptor],
        at: DateTime<Utc>,
    ) -> Result<(), PortalError> {
        let pool: Vec<UsageRecord> = self.pool.iter().filter(|r| r.user_id != user_id).cloned().collect();
        let timeout = Duration::from_millis(self.cfg.llm.timeout_ms);
        let llm = self.llm.clone();
        let mut synth = |f: &FunctionDescriptor, n: usize| -> Vec<String> {
            synthetic_queries(f, n, llm.as_deref(), timeout).unwrap_or_else(|_| template_queries(f, n))
        };
        let vocab = store.db.read().app_vocab().to_vec();
        let featurizer = &self.featurizer;
        let mut featurize = |q: &str, c: &ContextSnapshot| featurizer.featurize(q, c, &vocab);
        let records = bootstrap(collection, &pool, self.cfg.routing.bootstrap_alpha, at, &mut synth, &mut featurize)?;
        let mut db = store.db.write();
        for mut r in records {
            if let Some(last) = db.last_timestamp() {
                r.timestamp = r.timestamp.max(last);
            }
            db.append(r)?;
        }
        Ok(())
    }

    fn emit(&self, request_id: &str, user_id: &str, stage: &str, t: Instant, provenance: Option<Provenance>, confidence: Option<f64>, detail: Option<String>) {
        self.telemetry.emit(TelemetryEvent {
            at: Utc::now(),
            request_id: request_id.to_string(),
            user_id: user_id.to_string(),
            stage: stage.to_string(),
            latency_ms: elapsed_ms(t),
            provenance,
            confidence,
            detail,
        });
    }

    pub fn predict(&self, req: PredictRequest) -> Result<PredictionList, PortalError> {
        let start = Instant::now();
        let (clean, filter_raw) = parse_override(&req.text);
        if clean.is_empty() && filter_raw.is_none() {
            return Err(PortalError::InvalidRequest("empty text".into()));
        }
        let slot = self.slot_or_provision(&req.user_id, req.context.utc())?;
        let mut state = slot.state.lock();
        let request_id = match &req.request_id {
            Some(id) if state.served.contains_key(id) => {
                return Err(PortalError::InvalidRequest(format!("request id {id} already used")))
            }
            Some(id) => id.clone(),
            None => loop {
                let id = format!("{}-{}", req.user_id, state.profile.next_request);
                state.profile.next_request += 1;
                if !state.served.contains_key(&id) {
                    break id;
                }
            },
        };
        let user = req.user_id.as_str();
        let store = slot.store.clone();

        let t = Instant::now();
        self.observe_apps(&store, req.context.launches.iter().map(|l| l.app.as_str()))?;
        let feature = if clean.is_empty() {
            None
        } else {
            let db = store.db.read();
            Some(self.featurizer.featurize(&clean, &req.context, db.app_vocab())?)
        };
        self.emit(&request_id, user, "encode", t, None, None, None);

        let t = Instant::now();
        let params = store.params();
        let collection = &state.profile.collection;
        let (candidates, chat, record_filter, filter) = match &filter_raw {
            Some(raw) => {
                let f = OverrideFilter::resolve(raw, collection);
                if f.matched.is_empty() {
                    return Err(PortalError::InvalidRequest(format!("no function matches filter {raw:?}")));
                }
                let chat = f.matched.iter().all(|id| state.profile.function(id).is_some_and(|d| d.is_chat()));
                (f.matched.clone(), chat, RecordFilter::Any, Some(f))
            }
            None => {
                let has_chat = collection.iter().any(|f| f.is_chat());
                let has_plain = collection.iter().any(|f| !f.is_chat());
                let chat = match (&feature, has_chat, has_plain) {
                    (Some(v), true, true) => sigmoid(params.gate.score(v)?) >= 0.5,
                    _ => has_chat && !has_plain,
                };
                let ids: Vec<String> = collection.iter().filter(|f| f.is_chat() == chat).map(|f| f.id.clone()).collect();
                let rf = if chat { RecordFilter::Chat } else { RecordFilter::NonChat };
                (ids, chat, rf, None)
            }
        };
        self.emit(&request_id, user, "gate", t, None, None, Some(if chat { "chat" } else { "plain" }.into()));

        let mut llm_model_ms = None;
        let mut llm_wall_ms = 0.0;
        let mut transport_ms = 0.0;
        let mut llm_called = false;
        let mut confidence = 0.0;
        let ranked = match &feature {
            None => self.frequency_scores(&state.profile, &candidates),
            Some(v) => {
                let t = Instant::now();
                let (local, decision) = {
                    let db = store.db.read();
                    let k = self.cfg.routing.k;
                    let neighbors = db.top_k(user, v, k, record_filter, self.cfg.routing.user_weight);
                    let sims: Vec<f64> = neighbors.iter().map(|n| n.similarity).collect();
                    let decision = decide(&sims, k, self.cfg.routing.threshold);
                    let local = integrate_neighbors(&neighbors).ok().map(|l| mask_scores(&l, &candidates));
                    (local.filter(|s| !s.is_empty()), decision)
                };
                confidence = decision.confidence;
                self.emit(&request_id, user, "retrieve", t, None, Some(confidence), None);
                let want_llm = match self.cfg.routing.mode {
                    RoutingMode::LocalOnly => false,
                    RoutingMode::LlmOnly => true,
                    RoutingMode::Cascade => decision.route == Route::Llm || local.is_none(),
                };
                let llm_result = if want_llm {
                    llm_called = self.llm.is_some();
                    let t = Instant::now();
                    let r = self.ask_llm(&store, user, &clean, &req.context, v, &candidates, chat, record_filter);
                    llm_wall_ms = elapsed_ms(t);
                    match &r {
                        Ok((_, resp_ms)) => {
                            llm_model_ms = Some(resp_ms.0);
                            transport_ms = resp_ms.1;
                        }
                        Err(_) => transport_ms = llm_wall_ms,
                    }
                    self.emit(&request_id, user, "llm", t, None, Some(confidence), r.as_ref().err().map(|e| e.to_string()));
                    r.ok().map(|(ranking, _)| ranking)
                } else {
                    None
                };
                match (llm_result, local) {
                    (Some(ranking), _) => Ranked {
                        scores: positional_scores(&ranking),
                        provenance: Provenance::Llm,
                        llm_ranking: Some(ranking),
                    },
                    (None, Some(scores)) => Ranked {
                        scores,
                        provenance: Provenance::Local,
                        llm_ranking: None,
                    },
                    (None, None) => self.frequency_scores(&state.profile, &candidates),
                }
            }
        };

        let ranking = match ranked.provenance {
            Provenance::FallbackFrequency => frequency_order(&state.profile, &candidates),
            _ => {
                let prior = feature
                    .as_ref()
                    .and_then(|v| params.head.probabilities(v).ok())
                    .unwrap_or_default();
                rank_candidates(&candidates, &ranked.scores, &state.profile.usage, &prior)
            }
        };
        let rest: Vec<String> = state
            .profile
            .collection
            .iter()
            .filter(|f| !candidates.contains(&f.id))
            .map(|f| f.id.clone())
            .collect();
        let entries: Vec<RankedEntry> = ranking
            .iter()
            .take(MAX_ENTRIES)
            .enumerate()
            .map(|(i, id)| RankedEntry {
                function_id: id.clone(),
                score: ranked.scores.get(id).copied().unwrap_or(0.0),
                rank: i + 1,
            })
            .collect();
        let mut ranking = ranking;
        ranking.extend(frequency_order(&state.profile, &rest));
        let latency_ms = elapsed_ms(start);
        let model_ms = (latency_ms - llm_wall_ms).max(0.0) + llm_model_ms.unwrap_or(0.0);
        let list = PredictionList {
            request_id: request_id.clone(),
            entries,
            provenance: ranked.provenance,
            confidence,
            chat,
            llm_called,
            filter,
            ranking: ranking.clone(),
            latency_ms,
            model_ms,
            transport_ms,
            llm_model_ms,
        };
        self.emit(&request_id, user, "predict", start, Some(ranked.provenance), Some(confidence), None);
        let served = Served {
            llm_ranking: ranked.llm_ranking,
            query: clean,
            context: req.context,
            selected: false,
        };
        state.served.insert(request_id.clone(), served);
        state.order.push_back(request_id);
        while state.order.len() > SERVED_CAPACITY {
            if let Some(old) = state.order.pop_front() {
                state.served.remove(&old);
            }
        }
        Ok(list)
    }

    fn frequency_scores(&self, profile: &Profile, candidates: &[String]) -> Ranked {
        let total: u64 = candidates
            .iter()
            .map(|c| profile.usage.get(c).map_or(0, |u| u.count))
            .sum();
        let scores = candidates
            .iter()
            .map(|c| {
                let n = profile.usage.get(c).map_or(0, |u| u.count);
                (c.clone(), if total > 0 { n as f64 / total as f64 } else { 0.0 })
            })
            .collect();
        Ranked {
            scores,
            provenance: Provenance::FallbackFrequency,
            llm_ranking: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn ask_llm(
        &self,
        store: &Store,
        user: &str,
        text: &str,
        context: &ContextSnapshot,
        feature: &FeatureVector,
        candidates: &[String],
        chat: bool,
        record_filter: RecordFilter,
    ) -> Result<(LlmRanking, (f64, f64)), LlmError> {
        let backend = self
            .llm
            .as_ref()
            .ok_or_else(|| LlmError::Transport("no LLM configured".into()))?;
        let routing = &self.cfg.routing;
        let prompt = if chat {
            let db = store.db.read();
            let mut histories: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for r in db.records() {
                if r.origin == Origin::Live && r.user_id == user && candidates.contains(&r.chosen) {
                    histories.entry(r.chosen.clone()).or_default().push(r.query.clone());
                }
            }
            build_contact_prompt(text, candidates, &histories, self.cfg.llm.history_budget)?.render()
        } else {
            let examples: Vec<UsageRecord> = {
                let db = store.db.read();
                match routing.few_shot {
                    FewShotSelection::Nearest => db
                        .top_k(user, feature, routing.few_shot_m, record_filter, routing.user_weight)
                        .into_iter()
                        .map(|n| n.record.clone())
                        .collect(),
                    FewShotSelection::Random => {
                        let eligible: Vec<&UsageRecord> =
                            db.records().iter().filter(|r| record_filter.admits(r)).collect();
                        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(routing.seed, text.as_bytes()) ^ eligible.len() as u64);
                        let m = routing.few_shot_m.min(eligible.len());
                        let mut idx = sample(&mut rng, eligible.len(), m).into_vec();
                        idx.sort_unstable();
                        idx.into_iter().map(|i| eligible[i].clone()).collect()
                    }
                }
            };
            let refs: Vec<&UsageRecord> = examples.iter().collect();
            build_function_prompt(
                text,
                context,
                &refs,
                candidates,
                routing.few_shot_m,
                self.cfg.context.window_seconds,
            )?
            .render()
        };
        let resp = query(backend.as_ref(), &prompt, self.cfg.llm.timeout_ms)?;
        let ranking = parse_ranking(&resp.text, candidates)?;
        Ok((ranking, (resp.model_ms, resp.transport_ms)))
    }

    pub fn select(&self, req: SelectRequest) -> Result<SelectAck, PortalError> {
        if let Some(s) = req.satisfaction {
            if !(1..=5).contains(&s) {
                return Err(PortalError::InvalidRequest("satisfaction must be between 1 and 5".into()));
            }
        }
        let slot = self
            .slot(&req.user_id)
            .ok_or_else(|| PortalError::UnknownUser(req.user_id.clone()))?;
        let mut state = slot.state.lock();
        let state = &mut *state;
        let served = state
            .served
            .get_mut(&req.request_id)
            .ok_or_else(|| PortalError::UnknownRequest(req.request_id.clone()))?;
        if served.selected {
            return Err(PortalError::DuplicateSelection(req.request_id.clone()));
        }
        let descriptor = state
            .profile
            .function(&req.function_id)
            .cloned()
            .ok_or_else(|| PortalError::UnknownFunction(req.function_id.clone()))?;
        let known: Vec<String> = state.profile.collection.iter().map(|f| f.id.clone()).collect();
        let label = fuse_label(&req.function_id, &known, served.llm_ranking.as_ref())?;
        let store = &slot.store;
        let mut at = served.context.utc();
        let mut record_id = None;
        if !served.query.is_empty() {
            let mut db = store.db.write();
            if let Some(last) = db.last_timestamp() {
                at = at.max(last);
            }
            let feature = self.featurizer.featurize(&served.query, &served.context, db.app_vocab())?;
            record_id = Some(db.append(UsageRecord {
                id: 0,
                user_id: req.user_id.clone(),
                query: served.query.clone(),
                feature,
                context: served.context.clone(),
                label: label.clone(),
                chosen: req.function_id.clone(),
                chat: descriptor.is_chat(),
                timestamp: at,
                origin: Origin::Live,
            })?);
        }
        served.selected = true;
        let text = served.query.clone();
        let usage = state.profile.usage.entry(req.function_id.clone()).or_default();
        usage.count += 1;
        usage.last_used = Some(usage.last_used.map_or(at, |l| l.max(at)));
        if let Some(s) = req.satisfaction {
            state.profile.satisfaction.push((req.request_id.clone(), s));
        }
        let executed = self.exec.execute(&req.user_id, &descriptor, &text);
        if record_id.is_some() {
            self.persist_store(store, true)?;
        }
        self.persist_profile(&state.profile)?;
        self.telemetry.emit(TelemetryEvent {
            at: Utc::now(),
            request_id: req.request_id.clone(),
            user_id: req.user_id.clone(),
            stage: "select".into(),
            latency_ms: 0.0,
            provenance: None,
            confidence: None,
            detail: Some(req.function_id.clone()),
        });
        Ok(SelectAck {
            request_id: req.request_id,
            record_id,
            label,
            executed,
        })
    }

    /// The user's collection, provisioning them if needed.
    pub fn list_functions(&self, user_id: &str, at: DateTime<Utc>) -> Result<Vec<FunctionDescriptor>, PortalError> {
        let slot = self.slot_or_provision(user_id, at)?;
        let c = slot.state.lock().profile.collection.clone();
        Ok(c)
    }

    pub fn add_function(
        &self,
        user_id: &str,
        f: FunctionDescriptor,
        at: DateTime<Utc>,
    ) -> Result<Vec<FunctionDescriptor>, PortalError> {
        f.validate().map_err(|e| PortalError::InvalidRequest(e.to_string()))?;
        let slot = self.slot_or_provision(user_id, at)?;
        let mut state = slot.state.lock();
        if state.profile.function(&f.id).is_some() {
            return Err(PortalError::DuplicateFunction(f.id));
        }
        self.observe_apps(&slot.store, [f.app.as_str()])?;
        self.add_head_functions(&slot.store, std::slice::from_ref(&f.id));
        state.profile.collection.push(f);
        self.persist_profile(&state.profile)?;
        Ok(state.profile.collection.clone())
    }

    /// Removes a function from future predictions; its records stay.
    pub fn remove_function(&self, user_id: &str, id: &str) -> Result<Vec<FunctionDescriptor>, PortalError> {
        let slot = self
            .slot(user_id)
            .ok_or_else(|| PortalError::UnknownUser(user_id.to_string()))?;
        let mut state = slot.state.lock();
        let pos = state
            .profile
            .collection
            .iter()
            .position(|f| f.id == id)
            .ok_or_else(|| PortalError::UnknownFunction(id.to_string()))?;
        if state.profile.collection.len() == 1 {
            return Err(PortalError::LastFunction);
        }
        state.profile.collection.remove(pos);
        if !self.cfg.routing.shared_store {
            let store = &slot.store;
            store.functions.write().retain(|f| f != id);
            let mut guard = store.params.write();
            let mut p = (**guard).clone();
            if p.head.remove_function(id) {
                *guard = Arc::new(p);
            }
        }
        self.persist_profile(&state.profile)?;
        Ok(state.profile.collection.clone())
    }

    fn retrain_store(&self, store: &Store) -> Result<RetrainReport, PortalError> {
        let _guard = store.retrain.lock();
        let (records, vocab_len) = {
            let db = store.db.read();
            (db.records().to_vec(), db.app_vocab().len())
        };
        let functions = store.functions.read().clone();
        let dim = self.featurizer.feature_dim(vocab_len);
        let (params, report) = retrain(&records, &functions, dim, &self.cfg.trainer)?;
        let current_dim = self.featurizer.feature_dim(store.db.read().app_vocab().len());
        *store.params.write() = Arc::new(params);
        self.widen_params(store, current_dim);
        let wanted: Vec<String> = store.functions.read().clone();
        {
            let mut guard = store.params.write();
            if guard.head.functions != wanted {
                let mut p = (**guard).clone();
                let stale: Vec<String> = p.head.functions.iter().filter(|f| !wanted.contains(f)).cloned().collect();
                for f in stale {
                    p.head.remove_function(&f);
                }
                for f in &wanted {
                    p.head.add_function(f);
                }
                *guard = Arc::new(p);
            }
        }
        self.persist_store(store, true)?;
        Ok(report)
    }

    /// Retrains the store serving `user_id` and swaps the new parameters in.
    pub fn retrain(&self, user_id: &str) -> Result<RetrainReport, PortalError> {
        let slot = self
            .slot(user_id)
            .ok_or_else(|| PortalError::UnknownUser(user_id.to_string()))?;
        let t = Instant::now();
        let report = self.retrain_store(&slot.store)?;
        self.emit("", user_id, "retrain", t, None, None, Some(format!("{} examples", report.examples)));
        Ok(report)
    }

    pub fn retrain_all(&self) -> Vec<(String, Result<RetrainReport, PortalError>)> {
        let stores: Vec<Arc<Store>> = {
            let mut s: Vec<Arc<Store>> = self.stores.read().values().cloned().collect();
            s.sort_by(|a, b| a.key.cmp(&b.key));
            s
        };
        stores
            .into_iter()
            .map(|s| (s.key.clone(), self.retrain_store(&s)))
            .collect()
    }

    /// Copy of the parameters currently serving `user_id`.
    pub fn params(&self, user_id: &str) -> Option<Arc<ModelParams>> {
        self.slot(user_id).map(|s| s.store.params())
    }

    /// Number of records in the store serving `user_id`.
    pub fn record_count(&self, user_id: &str) -> Option<usize> {
        self.slot(user_id).map(|s| s.store.db.read().len())
    }

    pub fn profile(&self, user_id: &str) -> Option<Profile> {
        self.slot(user_id).map(|s| s.state.lock().profile.clone())
    }
}

/// Keeps candidate entries of a label and renormalizes them to sum to 1.
fn mask_scores(label: &LabelVector, candidates: &[String]) -> HashMap<String, f64> {
    let kept: Vec<(String, f64)> = label
        .iter()
        .filter(|(id, p)| *p > 0.0 && candidates.iter().any(|c| c == id))
        .map(|(id, p)| (id.to_string(), p))
        .collect();
    let total: f64 = kept.iter().map(|(_, p)| p).sum();
    if total <= 0.0 {
        return HashMap::new();
    }
    kept.into_iter().map(|(id, p)| (id, p / total)).collect()
}

/// 5, 4, 3, 2, 1 by position, normalized.
fn positional_scores(r: &LlmRanking) -> HashMap<String, f64> {
    let n = r.ranked.len();
    let total: usize = (0..n).map(|i| MAX_ENTRIES - i).sum();
    r.ranked
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), (MAX_ENTRIES - i) as f64 / total as f64))
        .collect()
}

/// Score descending, then most recent use, then the head's prior, then id.
pub fn rank_candidates(
    candidates: &[String],
    scores: &HashMap<String, f64>,
    usage: &BTreeMap<String, FunctionUsage>,
    prior: &BTreeMap<String, f64>,
) -> Vec<String> {
    let mut out: Vec<&String> = candidates.iter().collect();
    let score = |id: &str| scores.get(id).copied().unwrap_or(0.0);
    let last = |id: &str| usage.get(id).and_then(|u| u.last_used);
    let pr = |id: &str| prior.get(id).copied().unwrap_or(0.0);
    out.sort_by(|a, b| {
        score(b)
            .total_cmp(&score(a))
            .then_with(|| last(b).cmp(&last(a)))
            .then_with(|| pr(b).total_cmp(&pr(a)))
            .then_with(|| a.cmp(b))
    });
    out.into_iter().cloned().collect()
}

/// Use count descending, then most recent use, then collection order.
fn frequency_order(profile: &Profile, candidates: &[String]) -> Vec<String> {
    let pos = |id: &str| profile.collection.iter().position(|f| f.id == id).unwrap_or(usize::MAX);
    let usage = |id: &str| profile.usage.get(id).cloned().unwrap_or_default();
    let mut out = candidates.to_vec();
    out.sort_by(|a, b| {
        let (ua, ub) = (usage(a), usage(b));
        ub.count
            .cmp(&ua.count)
            .then_with(|| ub.last_used.cmp(&ua.last_used))
            .then_with(|| pos(a).cmp(&pos(b)))
    });
    out
}
