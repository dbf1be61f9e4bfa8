//! Component matching for element names and input text.
//!
//! The default matcher compares normalized strings: casefolded, trimmed,
//! internal whitespace collapsed, leading/trailing punctuation removed.
//! A token-overlap matcher with a threshold is available for looser
//! "same meaning" judgements on input text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Casefold, trim, collapse whitespace and strip terminal punctuation.
pub fn normalize(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextMatcher {
    /// Equality after [`normalize`].
    Normalized,
    /// Jaccard overlap of normalized word sets, at or above `threshold`.
    TokenOverlap { threshold: f64 },
}

impl Default for TextMatcher {
    fn default() -> Self {
        TextMatcher::Normalized
    }
}

impl TextMatcher {
    pub fn matches(&self, predicted: &str, reference: &str) -> bool {
        match self {
            TextMatcher::Normalized => normalize(predicted) == normalize(reference),
            TextMatcher::TokenOverlap { threshold } => {
                token_jaccard(predicted, reference) >= *threshold
            }
        }
    }
}

fn token_jaccard(a: &str, b: &str) -> f64 {
    let words = |s: &str| -> BTreeSet<String> {
        s.split_whitespace()
            .map(normalize)
            .filter(|w| !w.is_empty())
            .collect()
    };
    let (a, b) = (words(a), words(b));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    inter / union
}

/// Matchers used for the two kinds of free-text action components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Click target names.
    pub name: TextMatcher,
    /// Typed input text.
    pub text: TextMatcher,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Price: Low to High "), "price: low to high");
        assert_eq!(normalize("price: low to  high"), "price: low to high");
        assert_eq!(normalize("Wireless Mouse!"), "wireless mouse");
        assert_eq!(normalize("\"quoted.\""), "quoted");
        assert_eq!(normalize("Café\tMÜSLI"), "café müsli");
        assert_eq!(normalize("..."), "");
    }

    #[test]
    fn token_overlap() {
        let m = TextMatcher::TokenOverlap { threshold: 0.5 };
        assert!(m.matches("red running shoes", "running shoes red"));
        assert!(m.matches("red running shoes", "running shoes"));
        assert!(!m.matches("red running shoes", "blue sandals"));
        assert!(!TextMatcher::Normalized.matches("red running shoes", "running shoes"));
    }

    #[test]
    fn config_round_trip() {
        let cfg = MatcherConfig {
            name: TextMatcher::Normalized,
            text: TextMatcher::TokenOverlap { threshold: 0.8 },
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: MatcherConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
