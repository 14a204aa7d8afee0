use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, FixedOffset, Utc};

use super::{FunctionDescriptor, LabelVector, MemoryError, Origin, UsageRecord};
use crate::encoder::{ContextSnapshot, FeatureVector};

/// Splits `total` into integer parts proportional to `weights`, handing the
/// leftover units to the largest fractional remainders (earlier index wins
/// ties). The parts always sum to `total`. Zero total weight splits evenly.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| total as f64 * w / sum).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut parts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

/// How many bootstrap records each action and function receives.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPlan {
    pub per_action: BTreeMap<String, usize>,
    /// In the order of the user's function list.
    pub per_function: Vec<(String, usize)>,
}

impl BootstrapPlan {
    /// Action quota = `alpha` x the user's function count for that action.
    /// Inside an action, the quota is split in proportion to each function's
    /// add-one-smoothed frequency in the pool.
    pub fn new(
        user_functions: &[FunctionDescriptor],
        pool: &[UsageRecord],
        alpha: usize,
    ) -> Result<Self, MemoryError> {
        if user_functions.is_empty() {
            return Err(MemoryError::EmptyFunctionSet);
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for r in pool {
            *freq.entry(r.chosen.as_str()).or_default() += 1;
        }
        let mut by_action: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, f) in user_functions.iter().enumerate() {
            by_action.entry(f.action.as_str()).or_default().push(i);
        }
        let mut per_action = BTreeMap::new();
        let mut quotas = vec![0usize; user_functions.len()];
        for (action, members) in &by_action {
            let quota = alpha * members.len();
            per_action.insert(action.to_string(), quota);
            let weights: Vec<f64> = members
                .iter()
                .map(|&i| freq.get(user_functions[i].id.as_str()).copied().unwrap_or(0) as f64 + 1.0)
                .collect();
            for (&i, q) in members.iter().zip(largest_remainder(quota, &weights)) {
                quotas[i] = q;
            }
        }
        Ok(Self {
            per_action,
            per_function: user_functions
                .iter()
                .zip(quotas)
                .map(|(f, q)| (f.id.clone(), q))
                .collect(),
        })
    }

    pub fn total(&self) -> usize {
        self.per_function.iter().map(|(_, q)| q).sum()
    }
}

/// Builds the initial personal database for a new user from the shared pool,
/// topping up functions the pool cannot cover with synthetic records.
///
/// Pool records keep their query, context and source user; labels become
/// one-hot on the function they were selected for. Timestamps are clamped to
/// `at` and the result is ordered by time so it can be appended directly.
pub fn bootstrap<E: std::fmt::Display>(
    user_functions: &[FunctionDescriptor],
    pool: &[UsageRecord],
    alpha: usize,
    at: DateTime<Utc>,
    synth: &mut dyn FnMut(&FunctionDescriptor, usize) -> Vec<String>,
    featurize: &mut dyn FnMut(&str, &ContextSnapshot) -> Result<FeatureVector, E>,
) -> Result<Vec<UsageRecord>, MemoryError> {
    let plan = BootstrapPlan::new(user_functions, pool, alpha)?;
    let mut by_fn: HashMap<&str, Vec<&UsageRecord>> = HashMap::new();
    for r in pool {
        by_fn.entry(r.chosen.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(plan.total());
    let feat_err = |e: E| MemoryError::InvalidFunction(format!("featurization failed: {e}"));
    for (f, (_, quota)) in user_functions.iter().zip(&plan.per_function) {
        let quota = *quota;
        if quota == 0 {
            continue;
        }
        let mut avail = by_fn.get(f.id.as_str()).cloned().unwrap_or_default();
        avail.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.id.cmp(&b.id)));
        let picked: Vec<&UsageRecord> = if avail.len() <= quota {
            avail
        } else {
            // evenly spaced over the pool's history
            (0..quota).map(|i| avail[i * avail.len() / quota]).collect()
        };
        for src in &picked {
            let feature = featurize(&src.query, &src.context).map_err(feat_err)?;
            out.push(UsageRecord {
                id: 0,
                user_id: src.user_id.clone(),
                query: src.query.clone(),
                feature,
                context: src.context.clone(),
                label: LabelVector::one_hot(&f.id),
                chosen: f.id.clone(),
                chat: f.is_chat(),
                timestamp: src.timestamp.min(at),
                origin: Origin::Bootstrap,
            });
        }
        let deficit = quota - picked.len();
        if deficit > 0 {
            let context = ContextSnapshot::at(at.with_timezone(&FixedOffset::east_opt(0).unwrap()));
            for text in synth(f, deficit).into_iter().take(deficit) {
                let feature = featurize(&text, &context).map_err(feat_err)?;
                out.push(UsageRecord {
                    id: 0,
                    user_id: "synthetic".into(),
                    query: text,
                    feature,
                    context: context.clone(),
                    label: LabelVector::one_hot(&f.id),
                    chosen: f.id.clone(),
                    chat: f.is_chat(),
                    timestamp: at,
                    origin: Origin::Synthetic,
                });
            }
        }
    }
    out.sort_by_key(|r| r.timestamp);
    Ok(out)
}
