//! Raw browser events to grammar actions.
//!
//! * `other` events are discarded before anything else.
//! * A run of `keyinput` events on one target becomes one `input` carrying
//!   the field value after the last keystroke.
//! * Every maximal run of `scroll` events becomes one `scroll`.
//! * Each `click` becomes a `click`, typed by the recorded subtype label when
//!   present, else by the first matching [`ClickRule`], else `other`.

use serde::{Deserialize, Serialize};

use super::dom::DomNode;
use crate::action::{Action, ClickType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Click,
    Keyinput,
    Scroll,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    /// Milliseconds since session start.
    pub timestamp_ms: u64,
    pub kind: EventKind,
    /// Snapshot that was on screen when the event fired.
    pub snapshot_id: String,
    /// Recording node id of the event target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Accessible name captured by the recorder, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_name: Option<String>,
    /// Field value after a keystroke.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Scroll delta in CSS pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Click subtype label from the recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_type: Option<ClickType>,
    /// Rationale written by the shopper during recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Rule mapping a click target to a subtype. Matches when the target's tag
/// is in `tags` (or `tags` is empty) and any keyword occurs, case-insensitively,
/// in the target's name, text, or identifying attributes (or `keywords` is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRule {
    pub click_type: ClickType,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl ClickRule {
    fn new(click_type: ClickType, tags: &[&str], keywords: &[&str]) -> Self {
        ClickRule {
            click_type,
            tags: tags.iter().map(|s| s.to_string()).collect(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn matches(&self, tag: Option<&str>, haystack: &str) -> bool {
        let tag_ok = self.tags.is_empty()
            || tag.is_some_and(|t| self.tags.iter().any(|r| r.eq_ignore_ascii_case(t)));
        let kw_ok = self.keywords.is_empty()
            || self
                .keywords
                .iter()
                .any(|k| haystack.contains(&k.to_lowercase()));
        tag_ok && kw_ok
    }
}

/// Fallback subtype table used when a click carries no recorded label.
pub fn default_click_rules() -> Vec<ClickRule> {
    use ClickType::*;
    vec![
        ClickRule::new(
            Purchase,
            &[],
            &["add to cart", "add-to-cart", "addtocart", "buy now", "buy-now", "checkout", "check out", "subscribe", "place your order"],
        ),
        ClickRule::new(Quantity, &[], &["quantity", "qty", "increase", "decrease", "delete", "remove"]),
        ClickRule::new(CartPageSelect, &["input"], &["cart"]),
        ClickRule::new(CartSideBar, &[], &["sidebar", "side-bar", "side_bar", "flyout"]),
        ClickRule::new(SuggestedTerm, &[], &["suggestion", "autocomplete"]),
        ClickRule::new(Search, &[], &["search"]),
        ClickRule::new(Filter, &[], &["filter", "refinement", "sort by", "& up"]),
        ClickRule::new(Review, &[], &["review", "rating"]),
        ClickRule::new(PageRelated, &[], &["pagination", "carousel", "next page", "previous page"]),
        ClickRule::new(ProductOption, &[], &["option", "variation", "swatch", "size", "color", "colour"]),
        ClickRule::new(NavBar, &["nav"], &[]),
        ClickRule::new(NavBar, &[], &["nav-", "navbar", "menu"]),
        ClickRule::new(ProductLink, &["img"], &[]),
        ClickRule::new(ProductLink, &["a"], &["/dp/", "/product", "product-link"]),
    ]
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistillError {
    #[error("click event {index} (t={timestamp_ms}ms) has no resolvable target name")]
    UnresolvedClickTarget { index: usize, timestamp_ms: u64 },
}

/// Resolves the DOM node an event points at.
pub trait NodeLookup {
    fn node_for(&self, event: &RawEvent) -> Option<&DomNode>;
}

/// Lookup for event streams without DOM snapshots.
pub struct NoDom;

impl NodeLookup for NoDom {
    fn node_for(&self, _event: &RawEvent) -> Option<&DomNode> {
        None
    }
}

/// A distilled action together with the event that opened it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledAction {
    pub action: Action,
    /// Index into the input event list of the first event of the group.
    pub first_event: usize,
    /// First shopper-written rationale found within the group.
    pub rationale: Option<String>,
}

fn non_blank(s: Option<&str>) -> Option<&str> {
    s.filter(|s| !s.trim().is_empty())
}

/// Human-readable name of a click target: recorded name, then the node's
/// accessible name, visible text and identifying attributes.
fn resolve_name(event: &RawEvent, node: Option<&DomNode>) -> Option<String> {
    if let Some(name) = non_blank(event.target_name.as_deref()) {
        return Some(name.trim().to_string());
    }
    let node = node?;
    if let Some(label) = non_blank(node.attr("aria-label")) {
        return Some(label.trim().to_string());
    }
    let text = node.text_content();
    if !text.is_empty() {
        return Some(text);
    }
    ["alt", "title", "value", "placeholder", "name"]
        .iter()
        .find_map(|a| non_blank(node.attr(a)))
        .map(|s| s.trim().to_string())
}

fn classify_click(name: &str, node: Option<&DomNode>, rules: &[ClickRule]) -> ClickType {
    let mut haystack = name.to_lowercase();
    if let Some(n) = node {
        for a in ["id", "class", "href", "aria-label", "name", "type", "alt", "role"] {
            if let Some(v) = n.attr(a) {
                haystack.push(' ');
                haystack.push_str(&v.to_lowercase());
            }
        }
    }
    let tag = node.map(|n| n.tag.as_str());
    rules
        .iter()
        .find(|r| r.matches(tag, &haystack))
        .map_or(ClickType::Other, |r| r.click_type)
}

/// Distills an event stream, keeping provenance for each action.
pub fn distill_events(
    events: &[RawEvent],
    rules: &[ClickRule],
    lookup: &dyn NodeLookup,
) -> Result<Vec<DistilledAction>, DistillError> {
    let kept: Vec<(usize, &RawEvent)> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind != EventKind::Other)
        .collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < kept.len() {
        let (index, event) = kept[i];
        // extent of the group that starts here
        let mut j = i + 1;
        match event.kind {
            EventKind::Scroll => {
                while j < kept.len() && kept[j].1.kind == EventKind::Scroll {
                    j += 1;
                }
            }
            EventKind::Keyinput => {
                while j < kept.len()
                    && kept[j].1.kind == EventKind::Keyinput
                    && kept[j].1.target == event.target
                {
                    j += 1;
                }
            }
            EventKind::Click | EventKind::Other => {}
        }
        let group = &kept[i..j];
        let rationale = group
            .iter()
            .find_map(|(_, e)| non_blank(e.rationale.as_deref()))
            .map(str::to_string);

        let action = match event.kind {
            EventKind::Scroll => Some(Action::Scroll),
            EventKind::Keyinput => {
                let last = group.last().expect("group is non-empty").1;
                // a cleared field leaves nothing to reproduce
                non_blank(last.text.as_deref()).map(Action::input)
            }
            EventKind::Click => {
                let node = lookup.node_for(event);
                let name = resolve_name(event, node).ok_or(DistillError::UnresolvedClickTarget {
                    index,
                    timestamp_ms: event.timestamp_ms,
                })?;
                let click_type = event
                    .click_type
                    .unwrap_or_else(|| classify_click(&name, node, rules));
                Some(Action::click(click_type, name))
            }
            EventKind::Other => unreachable!("filtered above"),
        };
        // a dropped burst can leave two scroll groups adjacent
        let prev_scroll = out
            .last_mut()
            .filter(|d: &&mut DistilledAction| d.action == Action::Scroll);
        if let (Some(Action::Scroll), Some(prev)) = (&action, prev_scroll) {
            if prev.rationale.is_none() {
                prev.rationale = rationale;
            }
        } else if let Some(action) = action {
            out.push(DistilledAction {
                action,
                first_event: index,
                rationale,
            });
        } else {
            tracing::debug!(event = index, "dropping keyinput burst with empty final text");
        }
        i = j;
    }
    Ok(out)
}

/// Distills an event stream into grammar actions.
pub fn distill_actions(
    events: &[RawEvent],
    rules: &[ClickRule],
    lookup: &dyn NodeLookup,
) -> Result<Vec<Action>, DistillError> {
    Ok(distill_events(events, rules, lookup)?
        .into_iter()
        .map(|d| d.action)
        .collect())
}
