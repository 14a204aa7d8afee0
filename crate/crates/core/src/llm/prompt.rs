//! Prompt construction. Both prompts follow the same layout: a task
//! description, the candidate list (names only), supporting examples or chat
//! histories, and the query with a top-5 ranking instruction.
//!
//! The section headers (`[Options]`, `[Contacts]`, `[Query]`, `Input:`) are
//! part of the template contract; the scripted stub reads them back.

use std::collections::BTreeMap;
use std::fmt::Write;

use chrono::{DateTime, FixedOffset, Utc};

use super::LlmError;
use crate::encoder::ContextSnapshot;
use crate::memory::UsageRecord;

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

const FUNCTION_TASK: &str = "You are the intent engine of a smartphone text portal. \
The user typed a piece of text exactly as they would enter it into an app's text box, \
without saying what they want to do with it. Using the options, the user's past \
examples, their recent app usage and the time, decide which function the text is meant for.";

const CONTACT_TASK: &str = "You are the intent engine of a smartphone text portal. \
The user typed a chat message without saying who it is for. Using the contact list \
and the recent chat history with each contact, decide which contact should receive it.";

const RANK_INSTRUCTION: &str = "Rank the five most likely options in order of likelihood. \
Answer with one option per line formatted as \"1. <option>\", using the option names \
exactly as listed, and nothing else.";

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Apps launched in the last `window_seconds`, most recent first, e.g.
/// `Maps (45 s ago), Browser (3 min ago)`; `none` when empty.
pub fn describe_app_usage(ctx: &ContextSnapshot, window_seconds: f64) -> String {
    let now = ctx.utc();
    let mut recent: Vec<(i64, &str)> = ctx
        .launches
        .iter()
        .map(|l| ((now - l.at).num_seconds(), l.app.as_str()))
        .filter(|(dt, _)| *dt >= 0 && (*dt as f64) <= window_seconds)
        .collect();
    recent.sort();
    let mut seen: Vec<&str> = Vec::new();
    let parts: Vec<String> = recent
        .into_iter()
        .filter(|(_, app)| {
            let fresh = !seen.contains(app);
            seen.push(app);
            fresh
        })
        .map(|(dt, app)| {
            if dt < 60 {
                format!("{app} ({dt} s ago)")
            } else {
                format!("{app} ({} min ago)", dt / 60)
            }
        })
        .collect();
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join(", ")
    }
}

pub fn describe_time(now: DateTime<FixedOffset>) -> String {
    now.format("%a %H:%M").to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotBlock {
    pub input: String,
    pub app_usage: String,
    pub time: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBlock {
    pub input: String,
    pub app_usage: String,
    pub time: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionPrompt {
    pub task_description: String,
    pub candidate_options: Vec<String>,
    pub few_shot: Vec<FewShotBlock>,
    pub input_query: QueryBlock,
}

impl FunctionPrompt {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[Task]\n{}\n", self.task_description);
        let _ = writeln!(s, "[Options]");
        for c in &self.candidate_options {
            let _ = writeln!(s, "{c}");
        }
        if !self.few_shot.is_empty() {
            let _ = writeln!(s, "\n[Examples]");
            for b in &self.few_shot {
                let _ = writeln!(
                    s,
                    "Input: {}\nApp usage: {}\nTime: {}\nOutput: {}\n",
                    b.input, b.app_usage, b.time, b.output
                );
            }
        } else {
            s.push('\n');
        }
        let q = &self.input_query;
        let _ = write!(
            s,
            "[Query]\nInput: {}\nApp usage: {}\nTime: {}\n{}\nOutput:\n",
            q.input, q.app_usage, q.time, RANK_INSTRUCTION
        );
        s
    }
}

/// Function-prediction prompt. `examples` must already be ordered by
/// similarity (most similar first); at most `m` of them are used.
pub fn build_function_prompt(
    query: &str,
    context: &ContextSnapshot,
    examples: &[&UsageRecord],
    candidates: &[String],
    m: usize,
    window_seconds: f64,
) -> Result<FunctionPrompt, LlmError> {
    if candidates.is_empty() {
        return Err(LlmError::NoCandidates);
    }
    let few_shot = examples
        .iter()
        .take(m)
        .map(|r| FewShotBlock {
            input: one_line(&r.query),
            app_usage: describe_app_usage(&r.context, window_seconds),
            time: describe_time(r.context.now),
            output: r.chosen.clone(),
        })
        .collect();
    Ok(FunctionPrompt {
        task_description: FUNCTION_TASK.to_string(),
        candidate_options: candidates.to_vec(),
        few_shot,
        input_query: QueryBlock {
            input: one_line(query),
            app_usage: describe_app_usage(context, window_seconds),
            time: describe_time(context.now),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPrompt {
    pub task_description: String,
    pub contacts: Vec<String>,
    /// Per contact, oldest first, already truncated.
    pub chat_histories: Vec<(String, Vec<String>)>,
    pub input_query: String,
}

/// Messages kept per contact: `floor(budget / contacts)`.
pub fn history_cap(budget: usize, contacts: usize) -> usize {
    if contacts == 0 {
        0
    } else {
        budget / contacts
    }
}

impl ContactPrompt {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[Task]\n{}\n", self.task_description);
        let _ = writeln!(s, "[Contacts]");
        for c in &self.contacts {
            let _ = writeln!(s, "{c}");
        }
        for (c, msgs) in &self.chat_histories {
            let _ = writeln!(s, "\n[History: {c}]");
            if msgs.is_empty() {
                let _ = writeln!(s, "(no messages)");
            }
            for m in msgs {
                let _ = writeln!(s, "- {m}");
            }
        }
        let _ = write!(
            s,
            "\n[Query]\nInput: {}\n{}\nOutput:\n",
            self.input_query, RANK_INSTRUCTION
        );
        s
    }
}

pub fn build_contact_prompt(
    query: &str,
    contacts: &[String],
    histories: &BTreeMap<String, Vec<String>>,
    budget: usize,
) -> Result<ContactPrompt, LlmError> {
    if contacts.is_empty() {
        return Err(LlmError::NoContacts);
    }
    let cap = history_cap(budget, contacts.len());
    let chat_histories = contacts
        .iter()
        .map(|c| {
            let all = histories.get(c).map(Vec::as_slice).unwrap_or(&[]);
            let kept = &all[all.len().saturating_sub(cap)..];
            (c.clone(), kept.iter().map(|m| one_line(m)).collect())
        })
        .collect();
    Ok(ContactPrompt {
        task_description: CONTACT_TASK.to_string(),
        contacts: contacts.to_vec(),
        chat_histories,
        input_query: one_line(query),
    })
}

pub(crate) fn utc_offset(ts: DateTime<Utc>) -> DateTime<FixedOffset> {
    ts.with_timezone(&FixedOffset::east_opt(0).unwrap())
}
