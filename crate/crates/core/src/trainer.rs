//! Label fusion and the two linear models trained on the usage memory: the
//! softmax prediction head and the logistic chat gate.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainerConfig;
use crate::encoder::{sigmoid, ChatGateParams, FeatureVector};
use crate::llm::LlmRanking;
use crate::memory::{LabelVector, UsageRecord};

pub const FUSION_WEIGHTS: [f64; 5] = [0.8, 0.07, 0.06, 0.04, 0.03];
const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("every training example has the same class")]
    SingleClass { prior_only: ChatGateParams },
}

/// Builds the stored label for a selection. Without an LLM ranking the label
/// is one-hot; with one, the selected function keeps 0.8 and the ranked
/// alternatives (selected removed) get 0.07, 0.06, 0.04, 0.03 in order. Any
/// unfilled mass goes back to the selected function.
pub fn fuse_label(
    selected: &str,
    known: &[String],
    llm_top5: Option<&LlmRanking>,
) -> Result<LabelVector, TrainerError> {
    if !known.iter().any(|k| k == selected) {
        return Err(TrainerError::UnknownFunction(selected.to_string()));
    }
    let Some(ranking) = llm_top5 else {
        return Ok(LabelVector::one_hot(selected));
    };
    let mut label = BTreeMap::new();
    let mut others = Vec::new();
    for r in &ranking.ranked {
        if r != selected && !others.contains(&r) {
            others.push(r);
        }
    }
    let mut filled = 0.0;
    for (r, w) in others.into_iter().zip(&FUSION_WEIGHTS[1..]) {
        label.insert(r.clone(), *w);
        filled += w;
    }
    label.insert(selected.to_string(), 1.0 - filled);
    Ok(LabelVector(label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub functions: Vec<String>,
    /// One row per function, each of the feature dimension.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub dim: usize,
}

impl HeadParams {
    pub fn zeros(functions: &[String], dim: usize) -> Self {
        Self {
            functions: functions.to_vec(),
            weights: vec![vec![0.0; dim]; functions.len()],
            bias: vec![0.0; functions.len()],
            dim,
        }
    }

    /// Appends a zero row; other rows are untouched. Returns false if the
    /// function is already present.
    pub fn add_function(&mut self, id: &str) -> bool {
        if self.functions.iter().any(|f| f == id) {
            return false;
        }
        self.functions.push(id.to_string());
        self.weights.push(vec![0.0; self.dim]);
        self.bias.push(0.0);
        true
    }

    pub fn remove_function(&mut self, id: &str) -> bool {
        match self.functions.iter().position(|f| f == id) {
            Some(i) => {
                self.functions.remove(i);
                self.weights.remove(i);
                self.bias.remove(i);
                true
            }
            None => false,
        }
    }

    /// Inserts `count` zero columns at `at`, keeping existing scores.
    pub fn insert_columns(&mut self, at: usize, count: usize) {
        for row in &mut self.weights {
            row.splice(at..at, std::iter::repeat_n(0.0, count));
        }
        self.dim += count;
    }

    pub fn logits(&self, v: &FeatureVector) -> Result<Vec<f64>, TrainerError> {
        if v.dim() != self.dim {
            return Err(TrainerError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(v.as_slice()).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }

    /// Softmax probabilities keyed by function id.
    pub fn probabilities(&self, v: &FeatureVector) -> Result<BTreeMap<String, f64>, TrainerError> {
        let mut z = self.logits(v)?;
        softmax_in_place(&mut z);
        Ok(self.functions.iter().cloned().zip(z).collect())
    }
}

pub fn insert_gate_columns(gate: &mut ChatGateParams, at: usize, count: usize) {
    gate.weights.splice(at..at, std::iter::repeat_n(0.0, count));
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_ms: f64,
    pub examples: usize,
}

type SparseRow = Vec<(usize, f64)>;

fn sparse(x: &[f64]) -> SparseRow {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn check_dim(expected: usize, actual: usize) -> Result<(), TrainerError> {
    if expected != actual {
        return Err(TrainerError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Feature rows with soft targets over a fixed function order.
#[derive(Debug, Clone)]
pub struct HeadDataset {
    dim: usize,
    rows: Vec<SparseRow>,
    targets: Vec<Vec<f64>>,
}

impl HeadDataset {
    pub fn new(dim: usize, features: &[Vec<f64>], targets: Vec<Vec<f64>>) -> Result<Self, TrainerError> {
        if features.is_empty() {
            return Err(TrainerError::EmptyTrainingSet);
        }
        for x in features {
            check_dim(dim, x.len())?;
        }
        Ok(Self {
            dim,
            rows: features.iter().map(|x| sparse(x)).collect(),
            targets,
        })
    }

    /// Label mass on functions outside `functions` is ignored.
    pub fn from_records(records: &[UsageRecord], functions: &[String], dim: usize) -> Result<Self, TrainerError> {
        if records.is_empty() {
            return Err(TrainerError::EmptyTrainingSet);
        }
        let index: BTreeMap<&str, usize> = functions.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(records.len());
        let mut targets = Vec::with_capacity(records.len());
        for r in records {
            check_dim(dim, r.feature.dim())?;
            let mut t = vec![0.0; functions.len()];
            for (id, p) in r.label.iter() {
                if let Some(&i) = index.get(id) {
                    t[i] = p;
                }
            }
            rows.push(sparse(r.feature.as_slice()));
            targets.push(t);
        }
        Ok(Self { dim, rows, targets })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn row_logits(p: &HeadParams, row: &SparseRow, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let w = &p.weights[k];
        *o = p.bias[k] + row.iter().map(|(j, x)| w[*j] * x).sum::<f64>();
    }
}

/// Sum over examples of `-sum_i y_i log softmax(W x + b)_i`.
pub fn head_loss(p: &HeadParams, data: &HeadDataset) -> f64 {
    let mut z = vec![0.0; p.functions.len()];
    let mut total = 0.0;
    for (row, t) in data.rows.iter().zip(&data.targets) {
        row_logits(p, row, &mut z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += t.iter().zip(&z).map(|(y, zi)| y * (lse - zi)).sum::<f64>();
    }
    total
}

/// Gradient of [`head_loss`], shaped like the parameters.
pub fn head_gradient(p: &HeadParams, data: &HeadDataset) -> HeadParams {
    let n = p.functions.len();
    let mut g = HeadParams::zeros(&p.functions, p.dim);
    let mut z = vec![0.0; n];
    for (row, t) in data.rows.iter().zip(&data.targets) {
        row_logits(p, row, &mut z);
        softmax_in_place(&mut z);
        let mass: f64 = t.iter().sum();
        for k in 0..n {
            let d = mass * z[k] - t[k];
            if d == 0.0 {
                continue;
            }
            g.bias[k] += d;
            let gw = &mut g.weights[k];
            for (j, x) in row {
                gw[*j] += d * x;
            }
        }
    }
    g
}

fn step_head(p: &HeadParams, g: &HeadParams, lr: f64) -> HeadParams {
    let mut next = p.clone();
    for (row, grow) in next.weights.iter_mut().zip(&g.weights) {
        for (w, d) in row.iter_mut().zip(grow) {
            *w -= lr * d;
        }
    }
    for (b, d) in next.bias.iter_mut().zip(&g.bias) {
        *b -= lr * d;
    }
    next
}

/// Full-batch gradient descent with step halving on loss increase.
fn descend<P: Clone>(
    init: P,
    cfg: &TrainerConfig,
    examples: usize,
    loss: impl Fn(&P) -> f64,
    step: impl Fn(&P, f64) -> P,
) -> (P, TrainReport) {
    let start = Instant::now();
    let mut params = init;
    let mut current = loss(&params);
    let initial = current;
    let mut lr = cfg.lr;
    let mut halvings = 0;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        let trial = step(&params, lr);
        let trial_loss = loss(&trial);
        if !(trial_loss <= current) {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break;
            }
            lr /= 2.0;
            continue;
        }
        let delta = current - trial_loss;
        params = trial;
        current = trial_loss;
        if delta < cfg.tol {
            break;
        }
    }
    let report = TrainReport {
        epochs,
        initial_loss: initial,
        final_loss: current,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        examples,
    };
    (params, report)
}

pub fn train_head_on(
    data: &HeadDataset,
    params: HeadParams,
    cfg: &TrainerConfig,
) -> Result<(HeadParams, TrainReport), TrainerError> {
    if data.is_empty() {
        return Err(TrainerError::EmptyTrainingSet);
    }
    check_dim(params.dim, data.dim)?;
    Ok(descend(
        params,
        cfg,
        data.len(),
        |p| head_loss(p, data),
        |p, lr| step_head(p, &head_gradient(p, data), lr),
    ))
}

pub fn train_head(
    records: &[UsageRecord],
    params: HeadParams,
    cfg: &TrainerConfig,
) -> Result<(HeadParams, TrainReport), TrainerError> {
    let data = HeadDataset::from_records(records, &params.functions, params.dim)?;
    train_head_on(&data, params, cfg)
}

#[derive(Debug, Clone)]
pub struct GateDataset {
    dim: usize,
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
}

impl GateDataset {
    pub fn new(dim: usize, features: &[Vec<f64>], labels: &[bool]) -> Result<Self, TrainerError> {
        if features.is_empty() {
            return Err(TrainerError::EmptyTrainingSet);
        }
        for x in features {
            check_dim(dim, x.len())?;
        }
        Ok(Self {
            dim,
            rows: features.iter().map(|x| sparse(x)).collect(),
            labels: labels.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn from_records(records: &[UsageRecord], dim: usize) -> Result<Self, TrainerError> {
        if records.is_empty() {
            return Err(TrainerError::EmptyTrainingSet);
        }
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            check_dim(dim, r.feature.dim())?;
            rows.push(sparse(r.feature.as_slice()));
        }
        Ok(Self {
            dim,
            rows,
            labels: records.iter().map(|r| if r.chat { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn gate_logit(p: &ChatGateParams, row: &SparseRow) -> f64 {
    p.bias + row.iter().map(|(j, x)| p.weights[*j] * x).sum::<f64>()
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of the gate, summed over examples.
pub fn gate_loss(p: &ChatGateParams, data: &GateDataset) -> f64 {
    let total: f64 = data
        .rows
        .iter()
        .zip(&data.labels)
        .map(|(row, y)| {
            let s = gate_logit(p, row);
            y * softplus(-s) + (1.0 - y) * softplus(s)
        })
        .sum();
    total
}

pub fn gate_gradient(p: &ChatGateParams, data: &GateDataset) -> ChatGateParams {
    let mut g = ChatGateParams::zeros(p.weights.len());
    for (row, y) in data.rows.iter().zip(&data.labels) {
        let d = sigmoid(gate_logit(p, row)) - y;
        g.bias += d;
        for (j, x) in row {
            g.weights[*j] += d * x;
        }
    }
    g
}

/// Zero weights with the bias at the smoothed class prior's log-odds.
pub fn prior_only_gate(dim: usize, positives: usize, total: usize) -> ChatGateParams {
    let prior = (positives as f64 + 1.0) / (total as f64 + 2.0);
    ChatGateParams {
        weights: vec![0.0; dim],
        bias: (prior / (1.0 - prior)).ln(),
    }
}

pub fn train_chat_gate_on(
    data: &GateDataset,
    params: ChatGateParams,
    cfg: &TrainerConfig,
) -> Result<(ChatGateParams, TrainReport), TrainerError> {
    if data.is_empty() {
        return Err(TrainerError::EmptyTrainingSet);
    }
    check_dim(params.weights.len(), data.dim)?;
    let positives = data.labels.iter().filter(|y| **y > 0.5).count();
    if positives == 0 || positives == data.len() {
        return Err(TrainerError::SingleClass {
            prior_only: prior_only_gate(data.dim, positives, data.len()),
        });
    }
    Ok(descend(
        params,
        cfg,
        data.len(),
        |p| gate_loss(p, data),
        |p, lr| {
            let g = gate_gradient(p, data);
            ChatGateParams {
                weights: p.weights.iter().zip(&g.weights).map(|(w, d)| w - lr * d).collect(),
                bias: p.bias - lr * g.bias,
            }
        },
    ))
}

pub fn train_chat_gate(
    records: &[UsageRecord],
    params: ChatGateParams,
    cfg: &TrainerConfig,
) -> Result<(ChatGateParams, TrainReport), TrainerError> {
    let data = GateDataset::from_records(records, params.weights.len())?;
    train_chat_gate_on(&data, params, cfg)
}

/// Everything the serving path reads from a training cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub head: HeadParams,
    pub gate: ChatGateParams,
    /// Set when the gate saw a single class and fell back to its prior.
    pub gate_prior_only: bool,
}

impl ModelParams {
    pub fn untrained(functions: &[String], dim: usize) -> Self {
        Self {
            head: HeadParams::zeros(functions, dim),
            gate: ChatGateParams::zeros(dim),
            gate_prior_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub examples: usize,
    pub head: Option<TrainReport>,
    pub gate: Option<TrainReport>,
    pub gate_prior_only: bool,
    pub wall_ms: f64,
}

impl RetrainReport {
    pub fn is_noop(&self) -> bool {
        self.examples == 0
    }
}

/// Trains head and gate from zero on all `records`. An empty record set
/// gives untrained parameters and a no-op report.
pub fn retrain(
    records: &[UsageRecord],
    functions: &[String],
    dim: usize,
    cfg: &TrainerConfig,
) -> Result<(ModelParams, RetrainReport), TrainerError> {
    let start = Instant::now();
    let mut params = ModelParams::untrained(functions, dim);
    if records.is_empty() {
        return Ok((
            params,
            RetrainReport {
                examples: 0,
                head: None,
                gate: None,
                gate_prior_only: false,
                wall_ms: 0.0,
            },
        ));
    }
    let (head, head_report) = train_head(records, params.head, cfg)?;
    params.head = head;
    let gate_report = match train_chat_gate(records, ChatGateParams::zeros(dim), cfg) {
        Ok((gate, report)) => {
            params.gate = gate;
            Some(report)
        }
        Err(TrainerError::SingleClass { prior_only }) => {
            params.gate = prior_only;
            params.gate_prior_only = true;
            None
        }
        Err(e) => return Err(e),
    };
    let report = RetrainReport {
        examples: records.len(),
        head: Some(head_report),
        gate: gate_report,
        gate_prior_only: params.gate_prior_only,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((params, report))
}
