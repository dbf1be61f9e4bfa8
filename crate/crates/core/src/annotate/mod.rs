//! Rationale synthesis for steps that lack a human-written rationale.

mod cache;
mod prompt;
mod provider;

use std::collections::HashMap;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheRecord, RationaleCache};
pub use prompt::{build_prompt, DEFAULT_HTML_EXCERPT_CHARS, PROMPT_TEMPLATE};
pub use provider::{
    provider_from_config, HttpChatProvider, MockProvider, ProviderConfig, ProviderError, ProviderKind,
    RationaleProvider,
};

use crate::pipeline::TrainingExample;

/// Few-shot text used when no fixture is configured.
pub const DEFAULT_FEW_SHOT: &str = "Context: a search results page for \"running shoes\" with filter options on the left.\n\
Action: {\"type\":\"click\",\"click_type\":\"filter\",\"name\":\"Men's Size 10\"}\n\
Rationale: I only want to see shoes that come in my size.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSettings {
    pub few_shot: String,
    pub excerpt_chars: usize,
    /// Upper bound on in-flight provider calls.
    pub concurrency: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        AnnotateSettings {
            few_shot: DEFAULT_FEW_SHOT.to_string(),
            excerpt_chars: DEFAULT_HTML_EXCERPT_CHARS,
            concurrency: 4,
            max_attempts: 5,
            backoff_base_ms: 500,
        }
    }
}

impl AnnotateSettings {
    pub fn from_provider(cfg: &ProviderConfig) -> Self {
        AnnotateSettings {
            max_attempts: cfg.max_attempts,
            backoff_base_ms: cfg.backoff_base_ms,
            ..AnnotateSettings::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned an empty rationale")]
    EmptyReply,
    #[error("cache write failed: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Cached,
    Fetched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub rationale: String,
    pub source: AnnotationSource,
}

const ABBREVIATIONS: [&str; 12] = [
    "e.g.", "i.e.", "mr.", "mrs.", "ms.", "dr.", "vs.", "etc.", "st.", "no.", "approx.", "inc.",
];

/// The first sentence of `text`, trimmed. A sentence ends at a line break or
/// at `.`, `!` or `?` followed by whitespace or end of text, unless the word
/// before the period is a known abbreviation.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let bytes = text.as_bytes();
    let mut word_start = 0;
    for (i, c) in text.char_indices() {
        if c == '\n' || c == '\r' {
            return text[..i].trim_end();
        }
        if c.is_whitespace() {
            word_start = i + c.len_utf8();
            continue;
        }
        if matches!(c, '.' | '!' | '?') {
            let end = i + 1;
            let at_boundary = end == bytes.len() || text[end..].starts_with(char::is_whitespace);
            if !at_boundary {
                continue;
            }
            if c == '.' {
                let word = text[word_start..end].to_lowercase();
                if ABBREVIATIONS.contains(&word.as_str()) {
                    continue;
                }
            }
            return &text[..end];
        }
    }
    text
}

/// Loose first-person check: starts with the word "I" or contains " I ".
pub fn looks_first_person(sentence: &str) -> bool {
    let s = sentence.trim_start();
    let starts_with_i = s == "I"
        || s.strip_prefix('I')
            .is_some_and(|rest| rest.starts_with(|c: char| c.is_whitespace() || c == '\'' || c == '\u{2019}'));
    starts_with_i || s.contains(" I ")
}

fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << (attempt - 1).min(16));
    let jitter: f64 = rand::rng().random_range(0.5..=1.0);
    Duration::from_millis((exp as f64 * jitter) as u64)
}

async fn complete_with_retries(
    provider: &dyn RationaleProvider,
    prompt: &str,
    settings: &AnnotateSettings,
) -> Result<String, AnnotateError> {
    let max = settings.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match provider.complete(prompt).await {
            Ok(reply) => return Ok(reply),
            Err(e) if e.is_retryable() && attempt < max => {
                let delay = backoff_delay(settings.backoff_base_ms, attempt);
                tracing::debug!(attempt, error = %e, delay_ms = delay.as_millis() as u64, "retrying provider call");
                tokio::time::sleep(delay).await;
                attempt += 1;
            }
            Err(source) => return Err(AnnotateError::Provider { attempts: attempt, source }),
        }
    }
}

/// Rationale for one step, from the cache when present, otherwise from the
/// provider. Fetched replies are cut to their first sentence before caching.
pub async fn annotate(
    example: &TrainingExample,
    provider: &dyn RationaleProvider,
    cache: Option<&RationaleCache>,
    settings: &AnnotateSettings,
) -> Result<Annotation, AnnotateError> {
    let prompt = build_prompt(example, &settings.few_shot, settings.excerpt_chars);
    let key = cache_key(provider.model_id(), &prompt);
    if let Some(rec) = cache.and_then(|c| c.get(&key)) {
        return Ok(Annotation {
            rationale: rec.rationale,
            source: AnnotationSource::Cached,
        });
    }

    let reply = complete_with_retries(provider, &prompt, settings).await?;
    let sentence = first_sentence(&reply);
    if sentence.is_empty() {
        return Err(AnnotateError::EmptyReply);
    }
    if sentence.len() < reply.trim().len() {
        tracing::warn!(session = %example.session_id, step = example.step, "multi-sentence reply truncated to its first sentence");
    }
    if !looks_first_person(sentence) {
        tracing::warn!(session = %example.session_id, step = example.step, rationale = sentence, "rationale does not read as first person");
    }
    if let Some(c) = cache {
        c.put(&CacheRecord {
            key,
            model: provider.model_id().to_string(),
            rationale: sentence.to_string(),
        })?;
    }
    Ok(Annotation {
        rationale: sentence.to_string(),
        source: AnnotationSource::Fetched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub session_id: String,
    pub step: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    /// Steps that already carried a human rationale.
    pub preserved: usize,
    pub cached: usize,
    pub fetched: usize,
    pub failed: usize,
    pub failures: Vec<AnnotationFailure>,
}

/// Fills every missing target rationale, then copies the results into the
/// history entries of later steps. Existing rationales are never replaced.
/// Failed steps keep `None` and are listed in the report.
pub async fn annotate_dataset(
    examples: &mut [TrainingExample],
    provider: &dyn RationaleProvider,
    cache: Option<&RationaleCache>,
    settings: &AnnotateSettings,
) -> CoverageReport {
    let mut report = CoverageReport {
        total: examples.len(),
        ..CoverageReport::default()
    };
    let pending: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].target.rationale.is_none())
        .collect();
    report.preserved = examples.len() - pending.len();

    let snapshot: &[TrainingExample] = examples;
    let results: Vec<(usize, Result<Annotation, AnnotateError>)> = stream::iter(pending)
        .map(|i| async move { (i, annotate(&snapshot[i], provider, cache, settings).await) })
        .buffered(settings.concurrency.max(1))
        .collect()
        .await;

    for (i, res) in results {
        match res {
            Ok(a) => {
                match a.source {
                    AnnotationSource::Cached => report.cached += 1,
                    AnnotationSource::Fetched => report.fetched += 1,
                }
                examples[i].target.rationale = Some(a.rationale);
            }
            Err(e) => {
                tracing::warn!(session = %examples[i].session_id, step = examples[i].step, error = %e, "annotation failed");
                report.failed += 1;
                report.failures.push(AnnotationFailure {
                    session_id: examples[i].session_id.clone(),
                    step: examples[i].step,
                    error: e.to_string(),
                });
            }
        }
    }

    let by_step: HashMap<(String, usize), String> = examples
        .iter()
        .filter_map(|e| {
            e.target
                .rationale
                .clone()
                .map(|r| ((e.session_id.clone(), e.step), r))
        })
        .collect();
    for e in examples.iter_mut() {
        for h in e.query.history.iter_mut().filter(|h| h.rationale.is_none()) {
            h.rationale = by_step.get(&(e.session_id.clone(), h.step)).cloned();
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split() {
        assert_eq!(first_sentence("I want it. Then more."), "I want it.");
        assert_eq!(first_sentence("  I want it!  "), "I want it!");
        assert_eq!(first_sentence("I compare e.g. prices. Then stop."), "I compare e.g. prices.");
        assert_eq!(first_sentence("It costs $19.99 so I buy it. Done."), "It costs $19.99 so I buy it.");
        assert_eq!(first_sentence("I look\nsecond line"), "I look");
        assert_eq!(first_sentence("no terminator"), "no terminator");
        assert_eq!(first_sentence("   "), "");
    }

    #[test]
    fn first_person() {
        assert!(looks_first_person("I want it."));
        assert!(looks_first_person("I'm done."));
        assert!(looks_first_person("Now I see it."));
        assert!(!looks_first_person("It is nice."));
        assert!(!looks_first_person("Ideas abound."));
    }

    #[test]
    fn backoff_grows_with_jitter_bounds() {
        for attempt in 1..5 {
            let d = backoff_delay(100, attempt).as_millis() as u64;
            let full = 100 << (attempt - 1);
            assert!(d >= full / 2 && d <= full, "attempt {attempt}: {d}");
        }
    }
}
