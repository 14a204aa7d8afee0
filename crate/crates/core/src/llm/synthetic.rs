use std::time::Duration;

use chrono::{DateTime, Utc};

use super::prompt::utc_offset;
use super::{LlmBackend, LlmError};
use crate::encoder::{ContextSnapshot, EncoderError, FeatureVector};
use crate::memory::{FunctionDescriptor, LabelVector, Origin, UsageRecord};

/// `<action> <app> sample i` texts.
pub fn template_queries(f: &FunctionDescriptor, n: usize) -> Vec<String> {
    let target = f.contact.as_deref().unwrap_or(&f.app);
    (0..n).map(|i| format!("{} {} sample {i}", f.action, target)).collect()
}

fn generation_prompt(f: &FunctionDescriptor, n: usize) -> String {
    let what = match &f.contact {
        Some(c) => format!("send to {c} in {}", f.app),
        None => format!("{} in {}", f.action, f.app),
    };
    format!(
        "[Task]\nWrite {n} different short texts that a smartphone user might type when they \
         want to {what}. Write only the text itself, exactly as it would be typed, one per line, \
         with no numbering and no explanations.\n\nOutput:\n"
    )
}

/// Query texts for a function. Uses the LLM when given one; any failure or
/// shortfall is filled with template texts.
pub fn synthetic_queries(
    f: &FunctionDescriptor,
    n: usize,
    backend: Option<&dyn LlmBackend>,
    timeout: Duration,
) -> Result<Vec<String>, LlmError> {
    if n == 0 {
        return Err(LlmError::InvalidArgument("n must be at least 1".into()));
    }
    let mut out: Vec<String> = Vec::with_capacity(n);
    if let Some(b) = backend {
        match b.complete(&generation_prompt(f, n), timeout) {
            Ok(resp) => out.extend(
                resp.text
                    .lines()
                    .map(|l| {
                        l.trim()
                            .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == ')')
                            .trim()
                            .to_string()
                    })
                    .filter(|l| !l.is_empty())
                    .take(n),
            ),
            Err(e) => tracing::warn!(function = %f.id, "synthetic generation fell back to templates: {e}"),
        }
    }
    if out.len() < n {
        let missing = n - out.len();
        out.extend(template_queries(f, n).into_iter().skip(n - missing));
    }
    Ok(out)
}

/// `n` synthetic records for `f`, one-hot labelled, with an empty context at
/// time `at`.
pub fn generate_synthetic(
    f: &FunctionDescriptor,
    n: usize,
    backend: Option<&dyn LlmBackend>,
    timeout: Duration,
    at: DateTime<Utc>,
    featurize: &mut dyn FnMut(&str, &ContextSnapshot) -> Result<FeatureVector, EncoderError>,
) -> Result<Vec<UsageRecord>, LlmError> {
    let context = ContextSnapshot::at(utc_offset(at));
    synthetic_queries(f, n, backend, timeout)?
        .into_iter()
        .map(|query| {
            let feature = featurize(&query, &context)
                .map_err(|e| LlmError::InvalidArgument(e.to_string()))?;
            Ok(UsageRecord {
                id: 0,
                user_id: "synthetic".into(),
                query,
                feature,
                context: context.clone(),
                label: LabelVector::one_hot(&f.id),
                chosen: f.id.clone(),
                chat: f.is_chat(),
                timestamp: at,
                origin: Origin::Synthetic,
            })
        })
        .collect()
}
