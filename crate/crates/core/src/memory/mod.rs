//! Per-user record store: usage records, cosine retrieval with a same-user
//! boost, cold-start bootstrap and on-disk snapshots.

mod bootstrap;
mod persist;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{dot, ContextSnapshot, FeatureVector};

pub use bootstrap::{bootstrap, largest_remainder, BootstrapPlan};
pub use persist::{append_to_snapshot, load, save, Manifest, Segment, FORMAT_VERSION, VECTOR_MAGIC};

pub const CHAT_ACTION: &str = "chat";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("zero vector in similarity")]
    ZeroVector,
    #[error("dimension mismatch: store holds {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("record timestamp {got} precedes last appended {last}")]
    OutOfOrder { last: DateTime<Utc>, got: DateTime<Utc> },
    #[error("bootstrap needs at least one function")]
    EmptyFunctionSet,
    #[error("invalid function descriptor: {0}")]
    InvalidFunction(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A text-related function: `app-action`, or `app-contact` for chat.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub id: String,
    pub app: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl FunctionDescriptor {
    pub fn new(app: &str, action: &str) -> Self {
        Self {
            id: Self::canonical_id(app, action, None),
            app: app.to_string(),
            action: action.to_string(),
            contact: None,
            description: None,
        }
    }

    pub fn chat(app: &str, contact: &str) -> Self {
        Self {
            id: Self::canonical_id(app, CHAT_ACTION, Some(contact)),
            app: app.to_string(),
            action: CHAT_ACTION.to_string(),
            contact: Some(contact.to_string()),
            description: None,
        }
    }

    pub fn with_description(mut self, d: &str) -> Self {
        self.description = Some(d.to_string());
        self
    }

    pub fn canonical_id(app: &str, action: &str, contact: Option<&str>) -> String {
        match contact {
            Some(c) => format!("{app}-{c}"),
            None => format!("{app}-{action}"),
        }
    }

    pub fn is_chat(&self) -> bool {
        self.action == CHAT_ACTION
    }

    /// Checks field presence and that `id` is the canonical one.
    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: &str| Err(MemoryError::InvalidFunction(format!("{}: {m}", self.id)));
        if self.app.trim().is_empty() || self.action.trim().is_empty() {
            return bad("app and action must be non-empty");
        }
        if self.is_chat() != self.contact.is_some() {
            return bad("contact must be present exactly for chat functions");
        }
        if self.contact.as_deref().is_some_and(|c| c.trim().is_empty()) {
            return bad("contact must be non-empty");
        }
        if self.id != Self::canonical_id(&self.app, &self.action, self.contact.as_deref()) {
            return bad("id does not match app/action/contact");
        }
        Ok(())
    }
}

impl fmt::Display for FunctionDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Sparse probability distribution over function ids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(pub BTreeMap<String, f64>);

impl LabelVector {
    pub fn one_hot(id: &str) -> Self {
        Self(BTreeMap::from([(id.to_string(), 1.0)]))
    }

    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Compensated sum of all weights.
    pub fn total(&self) -> f64 {
        neumaier_sum(self.0.values().copied())
    }

    /// The id with the largest weight (ties: smallest id).
    pub fn argmax(&self) -> Option<&str> {
        self.0
            .iter()
            .fold(None::<(&str, f64)>, |best, (k, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((k, v)),
            })
            .map(|(k, _)| k)
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.0.is_empty() {
            return Err(MemoryError::InvalidLabel("empty label".into()));
        }
        if let Some((k, v)) = self.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(MemoryError::InvalidLabel(format!("weight {v} for {k}")));
        }
        let total = self.total();
        if (total - 1.0).abs() > 1e-6 {
            return Err(MemoryError::InvalidLabel(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Live,
    Bootstrap,
    Synthetic,
}

pub type RecordId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub id: RecordId,
    pub user_id: String,
    pub query: String,
    pub feature: FeatureVector,
    pub context: ContextSnapshot,
    pub label: LabelVector,
    pub chosen: String,
    /// Whether `chosen` is a chat function.
    pub chat: bool,
    pub timestamp: DateTime<Utc>,
    pub origin: Origin,
}

impl UsageRecord {
    pub fn validate(&self) -> Result<(), MemoryError> {
        self.label.validate()?;
        let top = self
            .label
            .0
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if self.label.get(&self.chosen) < top {
            return Err(MemoryError::InvalidLabel(format!(
                "chosen function {} does not carry the maximal weight",
                self.chosen
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub record: &'a UsageRecord,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFilter {
    Any,
    Chat,
    NonChat,
}

impl RecordFilter {
    pub fn admits(self, r: &UsageRecord) -> bool {
        match self {
            RecordFilter::Any => true,
            RecordFilter::Chat => r.chat,
            RecordFilter::NonChat => !r.chat,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn boosted_cosine(cos: f64, same_user: bool, user_weight: f64) -> f64 {
    let alpha = if same_user { user_weight } else { 1.0 };
    (cos * alpha).min(1.0)
}

/// Cosine similarity scaled by `user_weight` for same-user records and
/// clipped from above at 1.
pub fn similarity(
    query: &FeatureVector,
    candidate: &UsageRecord,
    same_user: bool,
    user_weight: f64,
) -> Result<f64, MemoryError> {
    let (a, b) = (query.as_slice(), candidate.feature.as_slice());
    if a.len() != b.len() {
        return Err(MemoryError::DimensionMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok(boosted_cosine(dot(a, b) / (na * nb), same_user, user_weight))
}

/// Descending similarity, then newer first, then smaller id.
pub fn neighbor_order(a: &Neighbor<'_>, b: &Neighbor<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| b.record.timestamp.cmp(&a.record.timestamp))
        .then_with(|| a.record.id.cmp(&b.record.id))
}

/// Database H for one user (or one shared pool): an append-only list of
/// records plus the app vocabulary their context features are laid out on.
#[derive(Debug, Clone, Default)]
pub struct PersonalDatabase {
    user_id: String,
    records: Vec<UsageRecord>,
    norms: Vec<f64>,
    next_id: RecordId,
    app_vocab: Vec<String>,
}

impl PersonalDatabase {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            ..Default::default()
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_id(&self) -> RecordId {
        self.next_id
    }

    pub fn app_vocab(&self) -> &[String] {
        &self.app_vocab
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.feature.dim())
    }

    /// Adds apps to the vocabulary. Returns true when it grew, in which case
    /// every stored feature must be recomputed with [`Self::refeaturize`].
    pub fn extend_vocab<'a>(&mut self, apps: impl IntoIterator<Item = &'a str>) -> bool {
        let before = self.app_vocab.len();
        for app in apps {
            if !self.app_vocab.iter().any(|a| a == app) {
                self.app_vocab.push(app.to_string());
            }
        }
        self.app_vocab.len() != before
    }

    pub fn refeaturize<E>(
        &mut self,
        mut f: impl FnMut(&UsageRecord, &[String]) -> Result<FeatureVector, E>,
    ) -> Result<(), E> {
        let vocab = self.app_vocab.clone();
        let mut fresh = Vec::with_capacity(self.records.len());
        for r in &self.records {
            fresh.push(f(r, &vocab)?);
        }
        for (r, v) in self.records.iter_mut().zip(fresh) {
            r.feature = v;
        }
        self.norms = self.records.iter().map(|r| norm(r.feature.as_slice())).collect();
        Ok(())
    }

    /// Appends a record, assigning its id. The record is visible to
    /// [`Self::top_k`] as soon as this returns.
    pub fn append(&mut self, mut record: UsageRecord) -> Result<RecordId, MemoryError> {
        record.validate()?;
        if let Some(d) = self.dim() {
            if d != record.feature.dim() {
                return Err(MemoryError::DimensionMismatch {
                    expected: d,
                    actual: record.feature.dim(),
                });
            }
        }
        if let Some(last) = self.last_timestamp() {
            if record.timestamp < last {
                return Err(MemoryError::OutOfOrder {
                    last,
                    got: record.timestamp,
                });
            }
        }
        let id = self.next_id;
        record.id = id;
        self.next_id += 1;
        self.norms.push(norm(record.feature.as_slice()));
        self.records.push(record);
        Ok(id)
    }

    fn is_same_user(&self, user_id: &str, r: &UsageRecord) -> bool {
        r.origin == Origin::Live && r.user_id == user_id
    }

    /// The `k` most similar records passing `filter`, by exhaustive scan.
    pub fn top_k(
        &self,
        user_id: &str,
        query: &FeatureVector,
        k: usize,
        filter: RecordFilter,
        user_weight: f64,
    ) -> Vec<Neighbor<'_>> {
        let qn = norm(query.as_slice());
        if k == 0 || qn == 0.0 {
            return Vec::new();
        }
        let mut out: Vec<Neighbor<'_>> = self
            .records
            .iter()
            .zip(&self.norms)
            .filter(|(r, n)| filter.admits(r) && **n > 0.0 && r.feature.dim() == query.dim())
            .map(|(r, n)| {
                let cos = dot(query.as_slice(), r.feature.as_slice()) / (qn * n);
                Neighbor {
                    record: r,
                    similarity: boosted_cosine(cos, self.is_same_user(user_id, r), user_weight),
                }
            })
            .collect();
        if out.len() > k {
            out.select_nth_unstable_by(k - 1, neighbor_order);
            out.truncate(k);
        }
        out.sort_by(neighbor_order);
        out
    }

    pub(crate) fn from_parts(
        user_id: String,
        records: Vec<UsageRecord>,
        next_id: RecordId,
        app_vocab: Vec<String>,
    ) -> Self {
        let norms = records.iter().map(|r| norm(r.feature.as_slice())).collect();
        Self {
            user_id,
            records,
            norms,
            next_id,
            app_vocab,
        }
    }
}
