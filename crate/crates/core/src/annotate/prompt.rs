use std::fmt::Write as _;

use crate::action::serialize_action;
use crate::pipeline::TrainingExample;

/// Annotation instructions; `{example}` is replaced by the few-shot text.
pub const PROMPT_TEMPLATE: &str = "<IMPORTANT>
You are given a customer's shopping journey on amazon.com. For each step, you will be provided with the context (what the user sees) and the action (what the user does). Your task is to predict the rationale behind the action from a first-person perspective.

Here is an example:
{example}

Output a one-sentence rationale in first person for the given action.
</IMPORTANT>";

/// Longest page excerpt placed in a prompt, in characters.
pub const DEFAULT_HTML_EXCERPT_CHARS: usize = 4_000;

/// Prompt for one step: the instructions, the previous actions, an excerpt
/// of the current page and the action to explain. Depends only on the
/// step's actions and HTML, never on rationales, so it is stable across
/// annotation runs.
pub fn build_prompt(example: &TrainingExample, few_shot: &str, excerpt_chars: usize) -> String {
    let mut out = PROMPT_TEMPLATE.replace("{example}", few_shot.trim_end());
    out.push_str("\n\n## Previous actions\n");
    if example.query.history.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, h) in example.query.history.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, serialize_action(&h.action));
    }
    out.push_str("\n## Current page\n");
    let html = &example.query.current_html;
    let excerpt: String = html.chars().take(excerpt_chars).collect();
    out.push_str(&excerpt);
    if excerpt.len() < html.len() {
        out.push_str("\n[... page truncated ...]");
    }
    out.push_str("\n\n## Action\n");
    out.push_str(&serialize_action(&example.target.action));
    out.push('\n');
    out
}
