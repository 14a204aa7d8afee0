use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::encoder::ContextSnapshot;
use crate::portal::Provenance;

/// One scored prediction from a replay.
///
/// Wall-clock timings are kept out of the serialized form so that trial logs
/// of two identical runs compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub user_id: String,
    pub day: usize,
    pub query: String,
    pub context: ContextSnapshot,
    pub truth: String,
    /// Full served ranking; empty when the trial failed.
    pub ranking: Vec<String>,
    /// Size of the user's collection at prediction time.
    pub candidates: usize,
    /// `None` for baselines.
    pub provenance: Option<Provenance>,
    pub llm_called: bool,
    /// Processing time reported by the LLM (simulated by the stub).
    pub llm_model_ms: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub latency_ms: f64,
    #[serde(skip)]
    pub model_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: usize,
    pub trials: usize,
    pub hit1: f64,
    pub hit5: f64,
    pub mrr: f64,
    pub local_fraction: f64,
    pub mean_latency_ms: f64,
    pub mean_model_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trials: usize,
    pub failures: usize,
    pub hit1: f64,
    pub hit5: f64,
    pub mrr: f64,
    pub local_fraction: f64,
    pub mean_latency_ms: f64,
    pub mean_model_ms: f64,
    pub per_day: Vec<DayMetrics>,
}

/// 1-based position of the truth in the served ranking. Failed trials have
/// no rank; a successful trial whose ranking omits the truth is invalid.
pub fn rank_of(t: &Trial) -> Result<Option<usize>, EvalError> {
    if t.error.is_some() {
        return Ok(None);
    }
    if t.ranking.len() > t.candidates {
        return Err(EvalError::RankingTooLong {
            index: t.index,
            len: t.ranking.len(),
            candidates: t.candidates,
        });
    }
    match t.ranking.iter().position(|f| *f == t.truth) {
        Some(p) => Ok(Some(p + 1)),
        None => Err(EvalError::TruthNotRanked {
            index: t.index,
            truth: t.truth.clone(),
        }),
    }
}

#[derive(Default)]
struct Acc {
    n: usize,
    hit1: usize,
    hit5: usize,
    rr: f64,
    local: usize,
    latency: f64,
    model: f64,
}

impl Acc {
    fn add(&mut self, t: &Trial, rank: Option<usize>) {
        self.n += 1;
        if let Some(r) = rank {
            self.hit1 += (r == 1) as usize;
            self.hit5 += (r <= 5) as usize;
            self.rr += 1.0 / r as f64;
        }
        self.local += (t.provenance == Some(Provenance::Local)) as usize;
        self.latency += t.latency_ms;
        self.model += t.model_ms;
    }

    fn frac(&self, x: usize) -> f64 {
        x as f64 / self.n as f64
    }

    fn day(&self, day: usize) -> DayMetrics {
        DayMetrics {
            day,
            trials: self.n,
            hit1: self.frac(self.hit1),
            hit5: self.frac(self.hit5),
            mrr: self.rr / self.n as f64,
            local_fraction: self.frac(self.local),
            mean_latency_ms: self.latency / self.n as f64,
            mean_model_ms: self.model / self.n as f64,
        }
    }
}

/// Hit@1, Hit@5 and MRR over all trials, overall and per day. Failed trials
/// count as misses.
pub fn metrics(trials: &[Trial]) -> Result<MetricsReport, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::EmptyTrials);
    }
    let mut all = Acc::default();
    let mut days: std::collections::BTreeMap<usize, Acc> = Default::default();
    let mut failures = 0;
    for t in trials {
        let rank = rank_of(t)?;
        failures += t.error.is_some() as usize;
        all.add(t, rank);
        days.entry(t.day).or_default().add(t, rank);
    }
    let overall = all.day(0);
    Ok(MetricsReport {
        trials: all.n,
        failures,
        hit1: overall.hit1,
        hit5: overall.hit5,
        mrr: overall.mrr,
        local_fraction: overall.local_fraction,
        mean_latency_ms: overall.mean_latency_ms,
        mean_model_ms: overall.mean_model_ms,
        per_day: days.iter().map(|(d, a)| a.day(*d)).collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::{FixedOffset, TimeZone};

    pub(crate) fn trial(index: usize, day: usize, truth_rank: usize, n: usize) -> Trial {
        let ranking: Vec<String> = (0..n).map(|i| format!("F{i}")).collect();
        Trial {
            index,
            user_id: "u".into(),
            day,
            query: "q".into(),
            context: ContextSnapshot::at(FixedOffset::east_opt(0).unwrap().with_ymd_and_hms(2024, 3, 4, 9, 0, 0).unwrap()),
            truth: ranking[truth_rank - 1].clone(),
            ranking,
            candidates: n,
            provenance: None,
            llm_called: false,
            llm_model_ms: 0.0,
            error: None,
            latency_ms: 0.0,
            model_ms: 0.0,
        }
    }

    #[test]
    fn hand_example() {
        let ts: Vec<Trial> = [1, 3, 7].iter().enumerate().map(|(i, r)| trial(i, 0, *r, 10)).collect();
        let m = metrics(&ts).unwrap();
        assert!((m.hit1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.hit5 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.mrr - (1.0 + 1.0 / 3.0 + 1.0 / 7.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_first() {
        let ts: Vec<Trial> = (0..4).map(|i| trial(i, i % 2, 1, 6)).collect();
        let m = metrics(&ts).unwrap();
        assert_eq!((m.hit1, m.hit5, m.mrr), (1.0, 1.0, 1.0));
        assert_eq!(m.per_day.len(), 2);
    }

    #[test]
    fn empty_and_missing_truth() {
        assert!(matches!(metrics(&[]), Err(EvalError::EmptyTrials)));
        let mut t = trial(0, 0, 1, 3);
        t.truth = "nope".into();
        assert!(matches!(metrics(&[t]), Err(EvalError::TruthNotRanked { .. })));
    }

    #[test]
    fn failures_are_misses() {
        let mut bad = trial(1, 0, 1, 3);
        bad.ranking.clear();
        bad.error = Some("boom".into());
        let m = metrics(&[trial(0, 0, 1, 3), bad]).unwrap();
        assert_eq!(m.failures, 1);
        assert_eq!(m.hit1, 0.5);
        assert_eq!(m.mrr, 0.5);
    }
}
