//! Hierarchical reward for rationale + action outputs.
//!
//! ```text
//! total = r_format + self_certainty + r_type + DARS * r_subaction
//! ```
//!
//! `r_format` is binary on strict envelope validity. `r_type` pays when the
//! predicted action type matches the ground truth. `r_subaction` only unlocks
//! on a type match and credits the fine-grained components (click subtype and
//! element name, or the typed text). DARS scales the subaction term.

mod certainty;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use certainty::{
    row_kl_to_uniform, self_certainty, self_certainty_over, InvalidDistribution, SparseRow,
    TokenDistribution, TokenRow, ROW_SUM_TOLERANCE,
};

use crate::action::{classify_parse_result, parse_response, Action, ActionType, OutputBucket, ParseMode};
use crate::matching::MatcherConfig;

/// Which positions of a distribution feed self-certainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertaintySpan {
    /// Rationale tokens only when span offsets are supplied, otherwise all positions.
    #[default]
    Rationale,
    /// Always every position.
    All,
}

/// Per-action-type replacements for the global DARS factor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarsOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub click: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scroll: Option<f64>,
}

impl DarsOverrides {
    fn get(&self, t: ActionType) -> Option<f64> {
        match t {
            ActionType::Input => self.input,
            ActionType::Click => self.click,
            ActionType::Scroll => self.scroll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r_format_value: f64,
    pub r_type_value: f64,
    pub w_click_type: f64,
    pub w_name: f64,
    pub w_text: f64,
    pub dars_factor: f64,
    pub dars_overrides: DarsOverrides,
    pub matcher: MatcherConfig,
    pub certainty_span: CertaintySpan,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_format_value: 1.0,
            r_type_value: 1.0,
            w_click_type: 0.5,
            w_name: 0.5,
            w_text: 1.0,
            dars_factor: 10_000.0,
            dars_overrides: DarsOverrides::default(),
            matcher: MatcherConfig::default(),
            certainty_span: CertaintySpan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    Config(String),
    #[error(transparent)]
    Distribution(#[from] InvalidDistribution),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let weights = [
            ("r_format_value", self.r_format_value),
            ("r_type_value", self.r_type_value),
            ("w_click_type", self.w_click_type),
            ("w_name", self.w_name),
            ("w_text", self.w_text),
        ];
        for (name, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(RewardError::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        let dars = std::iter::once(("dars_factor", Some(self.dars_factor))).chain(
            ActionType::ALL
                .into_iter()
                .map(|t| (t.as_str(), self.dars_overrides.get(t))),
        );
        for (name, d) in dars {
            if let Some(d) = d {
                if !d.is_finite() || d < 1.0 {
                    return Err(RewardError::Config(format!("DARS for {name} must be >= 1, got {d}")));
                }
            }
        }
        self.matcher_thresholds_ok()
    }

    fn matcher_thresholds_ok(&self) -> Result<(), RewardError> {
        use crate::matching::TextMatcher;
        for m in [&self.matcher.name, &self.matcher.text] {
            if let TextMatcher::TokenOverlap { threshold } = m {
                if !(0.0..=1.0).contains(threshold) {
                    return Err(RewardError::Config(format!(
                        "matcher threshold must be in [0, 1], got {threshold}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// DARS factor applied to the subaction term for a ground truth of type `t`.
    pub fn dars_for(&self, t: ActionType) -> f64 {
        self.dars_overrides.get(t).unwrap_or(self.dars_factor)
    }
}

/// Reward weights a caller may override per request. Matcher and span
/// settings are deliberately absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightOverrides {
    pub r_format_value: Option<f64>,
    pub r_type_value: Option<f64>,
    pub w_click_type: Option<f64>,
    pub w_name: Option<f64>,
    pub w_text: Option<f64>,
    pub dars_factor: Option<f64>,
    pub dars_overrides: Option<DarsOverrides>,
}

impl WeightOverrides {
    pub fn apply(&self, base: &RewardConfig) -> RewardConfig {
        let mut cfg = base.clone();
        let pairs = [
            (&mut cfg.r_format_value, self.r_format_value),
            (&mut cfg.r_type_value, self.r_type_value),
            (&mut cfg.w_click_type, self.w_click_type),
            (&mut cfg.w_name, self.w_name),
            (&mut cfg.w_text, self.w_text),
            (&mut cfg.dars_factor, self.dars_factor),
        ];
        for (slot, value) in pairs {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if let Some(o) = self.dars_overrides {
            cfg.dars_overrides = o;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub self_certainty: f64,
    /// False when no token distribution was supplied and self-certainty was taken as 0.
    pub self_certainty_available: bool,
    pub r_type: f64,
    pub r_subaction: f64,
    /// DARS factor that multiplied `r_subaction`.
    pub dars: f64,
    pub total: f64,
}

/// Which subaction components matched. `None` means the component does not
/// apply (wrong type, or not part of the ground-truth action).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComponentMatches {
    pub type_matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub click_type: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<bool>,
}

/// Full scoring result including diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub breakdown: RewardBreakdown,
    pub parse_bucket: OutputBucket,
    pub components: ComponentMatches,
}

/// `r_format_value` iff the raw output passes strict envelope validation.
pub fn format_reward(raw: &str, cfg: &RewardConfig) -> f64 {
    if parse_response(raw, ParseMode::Strict).is_ok() {
        cfg.r_format_value
    } else {
        0.0
    }
}

pub fn type_reward(pred: Option<&Action>, gt: &Action, cfg: &RewardConfig) -> f64 {
    match pred {
        Some(p) if p.action_type() == gt.action_type() => cfg.r_type_value,
        _ => 0.0,
    }
}

/// Matches the fine-grained components of `pred` against `gt`.
pub fn match_components(pred: Option<&Action>, gt: &Action, cfg: &RewardConfig) -> ComponentMatches {
    let Some(pred) = pred else {
        return ComponentMatches::default();
    };
    match (pred, gt) {
        (
            Action::Click { click_type: pc, name: pn },
            Action::Click { click_type: gc, name: gn },
        ) => ComponentMatches {
            type_matched: true,
            click_type: Some(pc == gc),
            name: Some(cfg.matcher.name.matches(pn, gn)),
            text: None,
        },
        (Action::Input { text: pt }, Action::Input { text: gt }) => ComponentMatches {
            type_matched: true,
            text: Some(cfg.matcher.text.matches(pt, gt)),
            ..Default::default()
        },
        (Action::Scroll, Action::Scroll) => ComponentMatches {
            type_matched: true,
            ..Default::default()
        },
        _ => ComponentMatches::default(),
    }
}

fn subaction_from_matches(m: &ComponentMatches, cfg: &RewardConfig) -> f64 {
    if !m.type_matched {
        return 0.0;
    }
    let credit = |hit: Option<bool>, w: f64| if hit == Some(true) { w } else { 0.0 };
    credit(m.click_type, cfg.w_click_type) + credit(m.name, cfg.w_name) + credit(m.text, cfg.w_text)
}

/// Fine-grained reward, gated on an action-type match. Scroll has no components.
pub fn subaction_reward(pred: Option<&Action>, gt: &Action, cfg: &RewardConfig) -> f64 {
    subaction_from_matches(&match_components(pred, gt, cfg), cfg)
}

/// Self-certainty term for an optional distribution and optional rationale span.
fn certainty_term(
    dist: Option<&TokenDistribution>,
    span: Option<Range<usize>>,
    cfg: &RewardConfig,
) -> Result<Option<f64>, InvalidDistribution> {
    let Some(d) = dist else {
        return Ok(None);
    };
    let s = match (cfg.certainty_span, span) {
        (CertaintySpan::Rationale, Some(span)) => self_certainty_over(d, span)?,
        _ => self_certainty(d)?,
    };
    Ok(Some(s))
}

/// Scores one raw output against the ground truth, with diagnostics.
pub fn score_response(
    raw: &str,
    dist: Option<&TokenDistribution>,
    rationale_span: Option<Range<usize>>,
    gt: &Action,
    cfg: &RewardConfig,
) -> Result<ScoredResponse, RewardError> {
    let parsed = parse_response(raw, ParseMode::Strict);
    let parse_bucket = classify_parse_result(&parsed);
    let pred = parsed.as_ref().ok().map(|r| &r.action);

    let r_format = if parsed.is_ok() { cfg.r_format_value } else { 0.0 };
    let certainty = certainty_term(dist, rationale_span, cfg)?;
    let r_type = type_reward(pred, gt, cfg);
    let components = match_components(pred, gt, cfg);
    let r_subaction = subaction_from_matches(&components, cfg);
    let dars = cfg.dars_for(gt.action_type());
    let self_certainty = certainty.unwrap_or(0.0);
    let total = r_format + self_certainty + r_type + dars * r_subaction;

    Ok(ScoredResponse {
        breakdown: RewardBreakdown {
            r_format,
            self_certainty,
            self_certainty_available: certainty.is_some(),
            r_type,
            r_subaction,
            dars,
            total,
        },
        parse_bucket,
        components,
    })
}

/// `r_format + s + r_type + DARS * r_subaction` for one output.
pub fn total_reward(
    raw: &str,
    dist: Option<&TokenDistribution>,
    gt: &Action,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    score_response(raw, dist, None, gt, cfg).map(|s| s.breakdown)
}
