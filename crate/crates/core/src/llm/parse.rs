use serde::{Deserialize, Serialize};

use super::LlmError;

pub const MAX_RANKED: usize = 5;

/// Up to five known candidate ids, most likely first, without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LlmRanking {
    pub ranked: Vec<String>,
}

/// Canonical answer format: `1. <name>` per line.
pub fn render_ranking(r: &LlmRanking) -> String {
    r.ranked
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn strip_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(|c: char| c == '#' || c == '-' || c == '*' || c == '\u{2022}');
    let t = t.trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    let t = if digits > 0 {
        let rest = &t[digits..];
        match rest.chars().next() {
            Some('.') | Some(')') | Some(':') => &rest[1..],
            _ => t,
        }
    } else {
        t
    };
    t.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*')
        .trim()
}

fn normalize(s: &str) -> String {
    let mapped: String = s
        .chars()
        .flat_map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().collect::<Vec<_>>()
            } else {
                vec![' ']
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Recovers a ranking from free-form model output.
///
/// Each line is first compared verbatim (after removing list markers) with
/// the candidate names; failing that, candidates whose normalized name
/// (lowercase, punctuation as spaces) occurs as whole words in the line are
/// taken in order of appearance, longest match first on overlaps. Unknown
/// names are dropped and duplicates keep their first position.
pub fn parse_ranking(raw: &str, candidates: &[String]) -> Result<LlmRanking, LlmError> {
    let normalized: Vec<String> = candidates.iter().map(|c| normalize(c)).collect();
    let mut ranked: Vec<String> = Vec::new();
    let push = |c: &String, ranked: &mut Vec<String>| {
        if !ranked.contains(c) && ranked.len() < MAX_RANKED {
            ranked.push(c.clone());
        }
    };
    for line in raw.lines() {
        if ranked.len() >= MAX_RANKED {
            break;
        }
        let stripped = strip_marker(line);
        if let Some(c) = candidates.iter().find(|c| c.as_str() == stripped) {
            push(c, &mut ranked);
            continue;
        }
        let hay = format!(" {} ", normalize(line));
        let mut hits: Vec<(usize, usize, usize)> = Vec::new();
        for (i, n) in normalized.iter().enumerate() {
            if n.is_empty() {
                continue;
            }
            let needle = format!(" {n} ");
            let mut from = 0;
            while let Some(pos) = hay[from..].find(&needle) {
                hits.push((from + pos, needle.len(), i));
                from += pos + 1;
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut end = 0;
        for (pos, len, i) in hits {
            // needles share their padding space with neighbours
            if pos + 1 < end {
                continue;
            }
            end = pos + len;
            push(&candidates[i], &mut ranked);
        }
    }
    if ranked.is_empty() {
        Err(LlmError::Unparseable)
    } else {
        Ok(LlmRanking { ranked })
    }
}
