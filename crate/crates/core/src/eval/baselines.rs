use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// One past use of a function, with the apps launched shortly before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub function_id: String,
    pub at: DateTime<Utc>,
    #[serde(default)]
    pub apps: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct Usage {
    count: usize,
    last: Option<DateTime<Utc>>,
}

fn usage(history: &[HistoryEvent]) -> HashMap<&str, Usage> {
    let mut m: HashMap<&str, Usage> = HashMap::new();
    for e in history {
        let u = m.entry(e.function_id.as_str()).or_default();
        u.count += 1;
        u.last = Some(u.last.map_or(e.at, |l| l.max(e.at)));
    }
    m
}

/// Splits candidates into used (sorted by `cmp`) followed by never-used ones
/// in their original order.
fn used_first(
    candidates: &[String],
    u: &HashMap<&str, Usage>,
    cmp: impl Fn(&Usage, &Usage) -> std::cmp::Ordering,
) -> Vec<String> {
    let mut used: Vec<(&String, Usage)> = candidates
        .iter()
        .filter_map(|c| u.get(c.as_str()).map(|x| (c, *x)))
        .collect();
    used.sort_by(|a, b| cmp(&a.1, &b.1).then_with(|| a.0.cmp(b.0)));
    let mut out: Vec<String> = used.into_iter().map(|(c, _)| c.clone()).collect();
    out.extend(candidates.iter().filter(|c| !u.contains_key(c.as_str())).cloned());
    out
}

/// Most frequently used first; ties by most recent use, then id. Functions
/// never used keep their candidate order at the end.
pub fn baseline_mfu(history: &[HistoryEvent], candidates: &[String]) -> Vec<String> {
    let u = usage(history);
    used_first(candidates, &u, |a, b| b.count.cmp(&a.count).then(b.last.cmp(&a.last)))
}

/// Most recently used first; ties by id. Functions never used keep their
/// candidate order at the end.
pub fn baseline_mru(history: &[HistoryEvent], candidates: &[String]) -> Vec<String> {
    let u = usage(history);
    used_first(candidates, &u, |a, b| b.last.cmp(&a.last))
}

/// Naive Bayes over the apps in the context:
/// `log P(f) + Σ_a log P(a|f)`, with `P(f)` the usage frequency and `P(a|f)`
/// add-one smoothed over every app seen in the history or the context.
/// Equal scores keep the MFU order.
pub fn baseline_bayes(history: &[HistoryEvent], context_apps: &[String], candidates: &[String]) -> Vec<String> {
    let mfu = baseline_mfu(history, candidates);
    let vocab: BTreeSet<&str> = history
        .iter()
        .flat_map(|e| e.apps.iter().map(String::as_str))
        .chain(context_apps.iter().map(String::as_str))
        .collect();
    let v = vocab.len() as f64;
    let total = history.len() as f64;
    let mut counts: HashMap<&str, (usize, usize, HashMap<&str, usize>)> = HashMap::new();
    for e in history {
        let c = counts.entry(e.function_id.as_str()).or_default();
        c.0 += 1;
        for a in &e.apps {
            c.1 += 1;
            *c.2.entry(a.as_str()).or_default() += 1;
        }
    }
    let score = |f: &str| -> f64 {
        let Some((n, apps_total, per_app)) = counts.get(f) else {
            return f64::NEG_INFINITY;
        };
        let mut s = (*n as f64 / total).ln();
        for a in context_apps {
            let k = per_app.get(a.as_str()).copied().unwrap_or(0) as f64;
            s += ((k + 1.0) / (*apps_total as f64 + v)).ln();
        }
        s
    };
    let mut scored: Vec<(f64, String)> = mfu.into_iter().map(|f| (score(&f), f)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, f)| f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn ev(f: &str, t: i64, apps: &[&str]) -> HistoryEvent {
        HistoryEvent {
            function_id: f.into(),
            at: Utc.timestamp_opt(t, 0).unwrap(),
            apps: ids(apps),
        }
    }

    #[test]
    fn empty_history_keeps_order() {
        let c = ids(&["C", "A", "B"]);
        assert_eq!(baseline_mfu(&[], &c), c);
        assert_eq!(baseline_mru(&[], &c), c);
        assert_eq!(baseline_bayes(&[], &ids(&["Maps"]), &c), c);
    }

    #[test]
    fn mfu_counts_and_ties() {
        let c = ids(&["A", "B", "C", "D"]);
        let h = vec![ev("A", 1, &[]), ev("A", 2, &[]), ev("A", 3, &[]), ev("B", 4, &[])];
        assert_eq!(baseline_mfu(&h, &c), ids(&["A", "B", "C", "D"]));
        let h = vec![ev("C", 5, &[]), ev("B", 9, &[]), ev("D", 9, &[])];
        assert_eq!(baseline_mfu(&h, &c), ids(&["B", "D", "C", "A"]));
    }

    #[test]
    fn mru_order() {
        let c = ids(&["A", "B", "C"]);
        let h = vec![ev("B", 1, &[]), ev("A", 2, &[])];
        assert_eq!(baseline_mru(&h, &c), ids(&["A", "B", "C"]));
        let h = vec![ev("A", 1, &[]), ev("B", 2, &[])];
        assert_eq!(baseline_mru(&h, &c), ids(&["B", "A", "C"]));
    }

    #[test]
    fn bayes_without_context_is_mfu() {
        let c = ids(&["A", "B", "C", "D"]);
        let h = vec![ev("C", 5, &["Maps"]), ev("B", 9, &[]), ev("D", 9, &["Uber"]), ev("D", 10, &[])];
        assert_eq!(baseline_bayes(&h, &[], &c), baseline_mfu(&h, &c));
    }

    #[test]
    fn bayes_closed_form() {
        let c = ids(&["f", "g"]);
        let h = vec![
            ev("f", 1, &["Maps"]),
            ev("g", 2, &["Uber"]),
            ev("g", 3, &["Uber"]),
            ev("g", 4, &["Uber"]),
        ];
        // f: ln(1/4) + ln((1+1)/(1+2)) = ln(1/6); g: ln(3/4) + ln((0+1)/(3+2)) = ln(3/20)
        assert_eq!(baseline_bayes(&h, &ids(&["Maps"]), &c), ids(&["f", "g"]));
        assert_eq!(baseline_bayes(&h, &[], &c), ids(&["g", "f"]));
    }

    #[test]
    fn unseen_app_keeps_scores_finite() {
        let c = ids(&["f", "g"]);
        let h = vec![ev("f", 1, &["Maps"]), ev("g", 2, &[])];
        let r = baseline_bayes(&h, &ids(&["Camera"]), &c);
        assert_eq!(r.len(), 2);
        // f: 1/2 * 1/3, g: 1/2 * 1/2
        assert_eq!(r, ids(&["g", "f"]));
    }
}
