//! Fast local prediction from retrieved neighbors and the confidence gate
//! that decides whether the LLM is consulted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{LabelVector, Neighbor, RecordId};

#[derive(Debug, Error, PartialEq)]
pub enum IntegratorError {
    #[error("no neighbors to integrate")]
    NoNeighbors,
    #[error("every neighbor has non-positive similarity")]
    AllZeroSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPrediction {
    pub scores: LabelVector,
    pub confidence: f64,
    pub neighbor_ids: Vec<RecordId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Local,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub confidence: f64,
    pub threshold: f64,
}

fn clamp_sim(s: f64) -> f64 {
    s.clamp(0.0, 1.0)
}

/// Similarity-weighted average of neighbor labels over the union of their
/// keys. Similarities are clamped to `[0, 1]` first.
pub fn integrate<'a, I>(neighbors: I) -> Result<LabelVector, IntegratorError>
where
    I: IntoIterator<Item = (f64, &'a LabelVector)>,
{
    let mut weighted: Vec<(f64, &LabelVector)> = Vec::new();
    let mut seen = false;
    for (sim, label) in neighbors {
        seen = true;
        let w = clamp_sim(sim);
        if w > 0.0 {
            weighted.push((w, label));
        }
    }
    if !seen {
        return Err(IntegratorError::NoNeighbors);
    }
    let total: f64 = weighted.iter().map(|(w, _)| w).sum();
    if total == 0.0 {
        return Err(IntegratorError::AllZeroSimilarity);
    }
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for (w, label) in weighted {
        let share = w / total;
        for (id, p) in label.iter() {
            *acc.entry(id.to_string()).or_default() += p * share;
        }
    }
    Ok(LabelVector(acc))
}

pub fn integrate_neighbors(neighbors: &[Neighbor<'_>]) -> Result<LabelVector, IntegratorError> {
    integrate(neighbors.iter().map(|n| (n.similarity, &n.record.label)))
}

/// Rank-weighted mean of similarities (sorted descending): the i-th of `k`
/// gets weight `k - i + 1`, normalized by `1 + 2 + ... + k`, where `k` is the
/// number of neighbors actually present.
pub fn confidence(similarities: &[f64]) -> Result<f64, IntegratorError> {
    let k = similarities.len();
    if k == 0 {
        return Err(IntegratorError::NoNeighbors);
    }
    let num: f64 = similarities
        .iter()
        .enumerate()
        .map(|(i, s)| clamp_sim(*s) * (k - i) as f64)
        .sum();
    let den = (k * (k + 1) / 2) as f64;
    Ok(num / den)
}

/// Local iff `confidence > threshold` (strict).
pub fn route(confidence: f64, threshold: f64) -> RouteDecision {
    RouteDecision {
        route: if confidence > threshold {
            Route::Local
        } else {
            Route::Llm
        },
        confidence,
        threshold,
    }
}

/// Full gate over a retrieved neighbor list: no neighbors means confidence 0;
/// fewer than `k` neighbors forces the LLM unless every similarity is 1.
pub fn decide(similarities: &[f64], k: usize, threshold: f64) -> RouteDecision {
    let conf = confidence(similarities).unwrap_or(0.0);
    let mut d = route(conf, threshold);
    if similarities.len() < k && !similarities.iter().all(|s| *s >= 1.0) {
        d.route = Route::Llm;
    }
    d
}

/// Integrator scores and confidence for the top `k` neighbors.
pub fn predict_local(neighbors: &[Neighbor<'_>], k: usize) -> Result<LocalPrediction, IntegratorError> {
    let used = &neighbors[..neighbors.len().min(k)];
    let sims: Vec<f64> = used.iter().map(|n| n.similarity).collect();
    Ok(LocalPrediction {
        scores: integrate_neighbors(used)?,
        confidence: confidence(&sims)?,
        neighbor_ids: used.iter().map(|n| n.record.id).collect(),
    })
}
