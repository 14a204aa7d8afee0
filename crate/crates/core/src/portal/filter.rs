use serde::{Deserialize, Serialize};

use crate::memory::FunctionDescriptor;

/// The text after the last `*` of an input, used to narrow the candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideFilter {
    pub raw: String,
    pub matched: Vec<String>,
}

impl OverrideFilter {
    /// Case-insensitive substring match over app, action, description and
    /// contact.
    pub fn matches(needle: &str, f: &FunctionDescriptor) -> bool {
        let needle = needle.trim().to_lowercase();
        if needle.is_empty() {
            return true;
        }
        [
            Some(f.app.as_str()),
            Some(f.action.as_str()),
            f.description.as_deref(),
            f.contact.as_deref(),
        ]
        .into_iter()
        .flatten()
        .any(|field| field.to_lowercase().contains(&needle))
    }

    pub fn resolve(raw: &str, collection: &[FunctionDescriptor]) -> Self {
        Self {
            raw: raw.to_string(),
            matched: collection
                .iter()
                .filter(|f| Self::matches(raw, f))
                .map(|f| f.id.clone())
                .collect(),
        }
    }
}

/// Splits at the last `*`: the part before (trimmed) is the input, the part
/// after is the filter.
pub fn parse_override(text: &str) -> (String, Option<String>) {
    match text.rfind('*') {
        Some(i) => (
            text[..i].trim().to_string(),
            Some(text[i + 1..].trim().to_string()),
        ),
        None => (text.trim().to_string(), None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        assert_eq!(parse_override("sushi *maps"), ("sushi".into(), Some("maps".into())));
        assert_eq!(parse_override("hello world"), ("hello world".into(), None));
        assert_eq!(parse_override("3*4 *calc"), ("3*4".into(), Some("calc".into())));
        assert_eq!(parse_override("*maps"), ("".into(), Some("maps".into())));
    }

    #[test]
    fn matching_fields() {
        let f = FunctionDescriptor::new("Google Maps", "search").with_description("Find places");
        assert!(OverrideFilter::matches("MAPS", &f));
        assert!(OverrideFilter::matches("sear", &f));
        assert!(OverrideFilter::matches("places", &f));
        assert!(!OverrideFilter::matches("music", &f));
        let c = FunctionDescriptor::chat("WeChat", "Alice");
        assert!(OverrideFilter::matches("ali", &c));
        let r = OverrideFilter::resolve("maps", &[f.clone(), c]);
        assert_eq!(r.matched, vec![f.id]);
    }
}
