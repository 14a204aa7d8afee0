use std::collections::HashSet;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::catalog::{combos, BACKGROUND_APPS, CATALOG, CHAT_APP, CHAT_TEMPLATES, CHAT_TOPICS, CONTACTS};
use super::EvalError;
use crate::encoder::{AppLaunch, ContextSnapshot, FeatureVector};
use crate::memory::{FunctionDescriptor, LabelVector, Origin, UsageRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub days: usize,
    pub functions_per_user: usize,
    pub queries_per_day: usize,
    /// Extra users whose history forms the shared bootstrap pool.
    pub pool_users: usize,
    /// Chat functions per user, out of `functions_per_user`.
    pub chat_functions: usize,
    /// Size of each user's personal phrase pool per function.
    pub phrases_per_function: usize,
    /// Zipf exponent over functions.
    pub zipf_exponent: f64,
    /// Zipf exponent over the phrases of a personal pool.
    pub phrase_exponent: f64,
    /// Probability that a query is a fresh phrase outside the personal pool.
    pub novel_rate: f64,
    /// Probability that a query is a misspelled pool phrase.
    pub typo_rate: f64,
    /// Probability that the target app was launched within the last minute.
    pub recent_target_rate: f64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            users: 4,
            days: 7,
            functions_per_user: 20,
            queries_per_day: 30,
            pool_users: 6,
            chat_functions: 3,
            phrases_per_function: 2,
            zipf_exponent: 1.0,
            phrase_exponent: 1.5,
            novel_rate: 0.10,
            typo_rate: 0.03,
            recent_target_rate: 0.3362,
            start: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: String,
    pub functions: Vec<FunctionDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    pub user_id: String,
    pub day: usize,
    pub query: String,
    pub context: ContextSnapshot,
    pub truth: String,
    /// App of the true function.
    pub target_app: String,
}

impl StreamItem {
    /// Whether the target app was launched at most `seconds` before the query.
    pub fn target_within(&self, seconds: f64) -> bool {
        let now = self.context.utc();
        self.context.launches.iter().any(|l| {
            l.app == self.target_app && l.at <= now && (now - l.at).num_milliseconds() as f64 <= seconds * 1e3
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub config: SynthConfig,
    pub users: Vec<SynthUser>,
    /// Evaluation queries, ordered by time.
    pub items: Vec<StreamItem>,
    pub pool_users: Vec<SynthUser>,
    /// History of the pool users, ordered by time.
    pub pool: Vec<StreamItem>,
}

impl SynthStream {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (i, it) in self.items.iter().enumerate() {
            let user = self
                .users
                .iter()
                .find(|u| u.user_id == it.user_id)
                .ok_or_else(|| EvalError::InvalidStream(format!("item {i}: unknown user {}", it.user_id)))?;
            if !user.functions.iter().any(|f| f.id == it.truth) {
                return Err(EvalError::InvalidStream(format!(
                    "item {i}: {} is not in the collection of {}",
                    it.truth, it.user_id
                )));
            }
            if it.query.trim().is_empty() {
                return Err(EvalError::InvalidStream(format!("item {i}: empty query")));
            }
            if i > 0 && self.items[i - 1].context.utc() > it.context.utc() {
                return Err(EvalError::InvalidStream(format!("item {i}: out of time order")));
            }
        }
        Ok(())
    }

    /// Pool history as one-hot usage records (features are recomputed by the
    /// consumer).
    pub fn pool_records(&self) -> Vec<UsageRecord> {
        let chat: HashSet<&str> = self
            .pool_users
            .iter()
            .flat_map(|u| u.functions.iter().filter(|f| f.is_chat()).map(|f| f.id.as_str()))
            .collect();
        self.pool
            .iter()
            .enumerate()
            .map(|(i, it)| UsageRecord {
                id: i as u64,
                user_id: it.user_id.clone(),
                query: it.query.clone(),
                feature: FeatureVector(Vec::new()),
                context: it.context.clone(),
                label: LabelVector::one_hot(&it.truth),
                chosen: it.truth.clone(),
                chat: chat.contains(it.truth.as_str()),
                timestamp: it.context.utc(),
                origin: Origin::Live,
            })
            .collect()
    }

    /// Start of the first day.
    pub fn start(&self) -> DateTime<Utc> {
        self.config.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    }
}

struct FunctionPlan {
    descriptor: FunctionDescriptor,
    combos: Vec<String>,
    pool: Vec<String>,
    hour: f64,
}

struct UserPlan {
    user: SynthUser,
    plans: Vec<FunctionPlan>,
    /// Cumulative Zipf weights over `plans`.
    cdf: Vec<f64>,
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x / total;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1)
}

fn typo(text: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        return format!("{text}{}", chars.last().copied().unwrap_or('x'));
    }
    let i = rng.random_range(1..chars.len() - 1);
    let mut out = chars.clone();
    match rng.random_range(0..3) {
        0 => {
            out.remove(i);
        }
        1 => out.insert(i, chars[i]),
        _ => out.swap(i, i + 1),
    }
    out.into_iter().collect()
}

fn plan_user(
    user_id: String,
    cfg: &SynthConfig,
    used: &mut HashSet<String>,
    rng: &mut ChaCha8Rng,
) -> UserPlan {
    let n_chat = cfg.chat_functions.min(cfg.functions_per_user).min(CONTACTS.len());
    let n_plain = (cfg.functions_per_user - n_chat).min(CATALOG.len());
    let n_chat = cfg.functions_per_user - n_plain;
    let mut entries: Vec<usize> = (0..CATALOG.len()).collect();
    entries.shuffle(rng);
    let mut contacts: Vec<&str> = CONTACTS.to_vec();
    contacts.shuffle(rng);
    let mut plans = Vec::new();
    for &e in &entries[..n_plain] {
        let c = &CATALOG[e];
        plans.push((FunctionDescriptor::new(c.app, c.action), combos(c.templates, c.topics)));
    }
    for name in &contacts[..n_chat] {
        plans.push((FunctionDescriptor::chat(CHAT_APP, name), combos(CHAT_TEMPLATES, CHAT_TOPICS)));
    }
    let functions: Vec<FunctionDescriptor> = plans.iter().map(|(f, _)| f.clone()).collect();
    let mut plans: Vec<FunctionPlan> = plans
        .into_iter()
        .map(|(descriptor, mut all)| {
            all.shuffle(rng);
            let mut pool = Vec::new();
            for c in &all {
                if pool.len() == cfg.phrases_per_function {
                    break;
                }
                if used.insert(c.clone()) {
                    pool.push(c.clone());
                }
            }
            let mut k = 2;
            while pool.len() < cfg.phrases_per_function {
                let c = format!("{} {k}", all[pool.len() % all.len()]);
                if used.insert(c.clone()) {
                    pool.push(c);
                }
                k += 1;
            }
            FunctionPlan {
                descriptor,
                combos: all,
                pool,
                hour: rng.random_range(8.0..22.0),
            }
        })
        .collect();
    // frequency rank is independent of collection order
    plans.shuffle(rng);
    UserPlan {
        user: SynthUser { user_id, functions },
        cdf: zipf_cdf(plans.len(), cfg.zipf_exponent),
        plans,
    }
}

fn query_text(p: &FunctionPlan, cfg: &SynthConfig, phrase_cdf: &[f64], rng: &mut ChaCha8Rng) -> String {
    let u: f64 = rng.random();
    if u < cfg.novel_rate {
        let fresh: Vec<&String> = p.combos.iter().filter(|c| !p.pool.contains(c)).collect();
        if let Some(c) = fresh.choose(rng) {
            return (*c).clone();
        }
    }
    let base = &p.pool[draw(phrase_cdf, rng)];
    if u >= cfg.novel_rate && u < cfg.novel_rate + cfg.typo_rate {
        typo(base, rng)
    } else {
        base.clone()
    }
}

fn context_for(
    now: DateTime<FixedOffset>,
    target: &str,
    apps: &[String],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> ContextSnapshot {
    let now_utc = now.with_timezone(&Utc);
    let mut launches = Vec::new();
    if rng.random::<f64>() < cfg.recent_target_rate {
        launches.push(AppLaunch {
            app: target.to_string(),
            at: now_utc - Duration::milliseconds(rng.random_range(0..=60_000)),
        });
    } else if rng.random::<f64>() < 0.25 {
        launches.push(AppLaunch {
            app: target.to_string(),
            at: now_utc - Duration::milliseconds(rng.random_range(60_001..=600_000)),
        });
    }
    let others: Vec<&String> = apps.iter().filter(|a| *a != target).collect();
    for _ in 0..rng.random_range(0..=2) {
        if let Some(a) = others.choose(rng) {
            launches.push(AppLaunch {
                app: (*a).clone(),
                at: now_utc - Duration::milliseconds(rng.random_range(0..=600_000)),
            });
        }
    }
    if rng.random::<f64>() < 0.15 {
        launches.push(AppLaunch {
            app: BACKGROUND_APPS.choose(rng).expect("non-empty").to_string(),
            at: now_utc - Duration::milliseconds(rng.random_range(0..=600_000)),
        });
    }
    launches.sort_by(|a, b| b.at.cmp(&a.at));
    ContextSnapshot { now, launches }
}

fn generate(plans: &[UserPlan], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<StreamItem> {
    let offset = FixedOffset::east_opt(0).expect("utc offset");
    let phrase_cdf = zipf_cdf(cfg.phrases_per_function, cfg.phrase_exponent);
    let jitter = Normal::new(0.0, 1.5).expect("valid normal");
    let mut items = Vec::new();
    for up in plans {
        let mut apps: Vec<String> = up.user.functions.iter().map(|f| f.app.clone()).collect();
        apps.sort();
        apps.dedup();
        for day in 0..cfg.days {
            let midnight = offset
                .from_local_datetime(&(cfg.start + Duration::days(day as i64)).and_hms_opt(0, 0, 0).expect("midnight"))
                .single()
                .expect("fixed offset");
            for _ in 0..cfg.queries_per_day {
                let p = &up.plans[draw(&up.cdf, rng)];
                let hour: f64 = if rng.random::<f64>() < 0.5 {
                    p.hour + jitter.sample(rng)
                } else {
                    rng.random_range(7.0..23.5)
                };
                let secs = (hour.clamp(6.0, 23.99) * 3600.0) as i64;
                let now = midnight + Duration::seconds(secs);
                let query = query_text(p, cfg, &phrase_cdf, rng);
                let context = context_for(now, &p.descriptor.app, &apps, cfg, rng);
                items.push(StreamItem {
                    user_id: up.user.user_id.clone(),
                    day,
                    query,
                    context,
                    truth: p.descriptor.id.clone(),
                    target_app: p.descriptor.app.clone(),
                });
            }
        }
    }
    items.sort_by(|a, b| a.context.now.cmp(&b.context.now).then_with(|| a.user_id.cmp(&b.user_id)));
    items
}

/// Seeded synthetic usage: per-user Zipf function frequencies, personal
/// phrase pools with novel and misspelled variants, and app-launch contexts.
pub fn synth_stream(cfg: &SynthConfig) -> Result<SynthStream, EvalError> {
    if cfg.users == 0 || cfg.days == 0 || cfg.functions_per_user == 0 || cfg.queries_per_day == 0 {
        return Err(EvalError::InvalidStream("all counts must be at least 1".into()));
    }
    if cfg.phrases_per_function == 0 {
        return Err(EvalError::InvalidStream("phrase pools must be non-empty".into()));
    }
    let max = CATALOG.len() + CONTACTS.len();
    if cfg.functions_per_user > max {
        return Err(EvalError::InvalidStream(format!("at most {max} functions per user")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let users: Vec<UserPlan> = (0..cfg.users)
        .map(|i| plan_user(format!("user{:02}", i + 1), cfg, &mut used, &mut rng))
        .collect();
    let pool_users: Vec<UserPlan> = (0..cfg.pool_users)
        .map(|i| plan_user(format!("pool{:02}", i + 1), cfg, &mut used, &mut rng))
        .collect();
    let items = generate(&users, cfg, &mut rng);
    let pool = generate(&pool_users, cfg, &mut rng);
    Ok(SynthStream {
        config: cfg.clone(),
        users: users.into_iter().map(|u| u.user).collect(),
        items,
        pool_users: pool_users.into_iter().map(|u| u.user).collect(),
        pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn same_seed_same_stream() {
        let cfg = SynthConfig::default();
        let a = synth_stream(&cfg).unwrap();
        let b = synth_stream(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.items.len(), 4 * 7 * 30);
        a.validate().unwrap();
        let c = synth_stream(&SynthConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.items, c.items);
    }

    #[test]
    fn collections_are_sized_and_unique() {
        let s = synth_stream(&SynthConfig::default()).unwrap();
        for u in s.users.iter().chain(&s.pool_users) {
            assert_eq!(u.functions.len(), 20);
            let ids: HashSet<&str> = u.functions.iter().map(|f| f.id.as_str()).collect();
            assert_eq!(ids.len(), 20);
            assert_eq!(u.functions.iter().filter(|f| f.is_chat()).count(), 3);
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = SynthConfig { days: 0, ..Default::default() };
        assert!(synth_stream(&cfg).is_err());
    }

    #[test]
    fn frequencies_are_heavy_tailed() {
        let cfg = SynthConfig {
            users: 1,
            days: 200,
            ..Default::default()
        };
        let s = synth_stream(&cfg).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for it in &s.items {
            *counts.entry(it.truth.as_str()).or_default() += 1;
        }
        let mut c: Vec<usize> = counts.values().copied().collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(c.len(), 20);
        assert!(c[0] as f64 / c[19] as f64 > 5.0, "{c:?}");
    }

    #[test]
    fn chat_pool_records_are_flagged() {
        let s = synth_stream(&SynthConfig::default()).unwrap();
        let recs = s.pool_records();
        assert_eq!(recs.len(), s.pool.len());
        assert!(recs.iter().any(|r| r.chat));
        assert!(recs.iter().all(|r| r.chat == (r.chosen.starts_with("WeChat-") && r.chosen != "WeChat-search")));
    }
}
