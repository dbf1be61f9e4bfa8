//! The closed action grammar and the rationale/action response envelope.
//!
//! A model response is a single JSON object with exactly two keys:
//!
//! ```json
//! {"rationale": "I want to read what other buyers think.",
//!  "action": {"type": "click", "click_type": "review", "name": "See all reviews"}}
//! ```
//!
//! Actions come in three shapes: `input` (carries `text`), `click` (carries
//! `click_type` and `name`) and `scroll` (carries nothing). The canonical
//! encoding produced by [`serialize_action`] is the wire format used by the
//! dataset files, the reward service and evaluation logs.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

/// High-level action category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionType {
    Input,
    Click,
    Scroll,
}

impl ActionType {
    pub const ALL: [ActionType; 3] = [ActionType::Input, ActionType::Click, ActionType::Scroll];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Input => "input",
            ActionType::Click => "click",
            ActionType::Scroll => "scroll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Semantic category of a click target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickType {
    /// Add to cart, buy now, subscribe, checkout.
    Purchase,
    Search,
    Review,
    Filter,
    /// Quantity increase/decrease and item deletion.
    Quantity,
    ProductOption,
    CartSideBar,
    SuggestedTerm,
    NavBar,
    /// Pagination and carousel navigation.
    PageRelated,
    CartPageSelect,
    ProductLink,
    Other,
}

impl ClickType {
    pub const ALL: [ClickType; 13] = [
        ClickType::Purchase,
        ClickType::Search,
        ClickType::Review,
        ClickType::Filter,
        ClickType::Quantity,
        ClickType::ProductOption,
        ClickType::CartSideBar,
        ClickType::SuggestedTerm,
        ClickType::NavBar,
        ClickType::PageRelated,
        ClickType::CartPageSelect,
        ClickType::ProductLink,
        ClickType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClickType::Purchase => "purchase",
            ClickType::Search => "search",
            ClickType::Review => "review",
            ClickType::Filter => "filter",
            ClickType::Quantity => "quantity",
            ClickType::ProductOption => "product_option",
            ClickType::CartSideBar => "cart_side_bar",
            ClickType::SuggestedTerm => "suggested_term",
            ClickType::NavBar => "nav_bar",
            ClickType::PageRelated => "page_related",
            ClickType::CartPageSelect => "cart_page_select",
            ClickType::ProductLink => "product_link",
            ClickType::Other => "other",
        }
    }

    /// Case-sensitive lookup of the snake_case name.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ClickType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One user action in the closed grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    Input { text: String },
    Click { click_type: ClickType, name: String },
    Scroll,
}

impl Action {
    pub fn input(text: impl Into<String>) -> Self {
        Action::Input { text: text.into() }
    }

    pub fn click(click_type: ClickType, name: impl Into<String>) -> Self {
        Action::Click {
            click_type,
            name: name.into(),
        }
    }

    pub fn action_type(&self) -> ActionType {
        match self {
            Action::Input { .. } => ActionType::Input,
            Action::Click { .. } => ActionType::Click,
            Action::Scroll => ActionType::Scroll,
        }
    }

    /// Validates a JSON value against the action schema.
    pub fn from_value(value: &Value, mode: ParseMode) -> Result<Self, FormatError> {
        let obj = value.as_object().ok_or(FormatError::WrongType {
            key: "action",
            expected: "an object",
        })?;
        let type_name = match obj.get("type") {
            None => return Err(FormatError::MissingKey("type")),
            Some(Value::String(s)) => s,
            Some(_) => {
                return Err(FormatError::WrongType {
                    key: "type",
                    expected: "a string",
                })
            }
        };
        let action_type = ActionType::parse(type_name)
            .ok_or_else(|| FormatError::UnknownActionType(type_name.clone()))?;

        if mode == ParseMode::Strict {
            let allowed: &[&str] = match action_type {
                ActionType::Input => &["type", "text"],
                ActionType::Click => &["type", "click_type", "name"],
                ActionType::Scroll => &["type"],
            };
            if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(FormatError::UnexpectedKey(extra.clone()));
            }
        }

        match action_type {
            ActionType::Input => Ok(Action::Input {
                text: required_string(obj, "text")?,
            }),
            ActionType::Click => {
                let raw_click_type = match obj.get("click_type") {
                    None => return Err(FormatError::MissingKey("click_type")),
                    Some(Value::String(s)) => s,
                    Some(_) => {
                        return Err(FormatError::WrongType {
                            key: "click_type",
                            expected: "a string",
                        })
                    }
                };
                let click_type = ClickType::parse(raw_click_type)
                    .ok_or_else(|| FormatError::UnknownClickType(raw_click_type.clone()))?;
                Ok(Action::Click {
                    click_type,
                    name: required_string(obj, "name")?,
                })
            }
            ActionType::Scroll => Ok(Action::Scroll),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Action::from_value(&value, ParseMode::Strict).map_err(serde::de::Error::custom)
    }
}

fn required_string(obj: &Map<String, Value>, key: &'static str) -> Result<String, FormatError> {
    match obj.get(key) {
        None => Err(FormatError::MissingKey(key)),
        Some(Value::String(s)) if s.trim().is_empty() => Err(FormatError::EmptyField(key)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(FormatError::WrongType {
            key,
            expected: "a string",
        }),
    }
}

/// The `{rationale, action}` envelope a model is asked to produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub rationale: String,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Exactly one JSON object, exactly the two envelope keys, no extra fields.
    #[default]
    Strict,
    /// Tolerates surrounding prose, extra keys and an empty rationale.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("output is not valid JSON: {0}")]
    NotJson(String),
    #[error("no JSON object found in output")]
    NoJsonObject,
    #[error("top-level JSON value is not an object")]
    NotObject,
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("unexpected key `{0}`")]
    UnexpectedKey(String),
    #[error("`{key}` must be {expected}")]
    WrongType {
        key: &'static str,
        expected: &'static str,
    },
    #[error("`{0}` must be a non-empty string")]
    EmptyField(&'static str),
    #[error("rationale is empty")]
    EmptyRationale,
    #[error("unknown action type `{0}`")]
    UnknownActionType(String),
    #[error("unknown click_type `{0}`")]
    UnknownClickType(String),
}

/// Parses raw model output into a validated [`ModelResponse`].
pub fn parse_response(raw: &str, mode: ParseMode) -> Result<ModelResponse, FormatError> {
    let value = match mode {
        ParseMode::Strict => {
            serde_json::from_str::<Value>(raw).map_err(|e| FormatError::NotJson(e.to_string()))?
        }
        ParseMode::Lenient => match serde_json::from_str::<Value>(raw.trim()) {
            Ok(v) => v,
            Err(_) => extract_first_object(raw).ok_or(FormatError::NoJsonObject)?,
        },
    };
    envelope_from_value(&value, mode)
}

fn envelope_from_value(value: &Value, mode: ParseMode) -> Result<ModelResponse, FormatError> {
    let obj = value.as_object().ok_or(FormatError::NotObject)?;
    let rationale = match obj.get("rationale") {
        None => return Err(FormatError::MissingKey("rationale")),
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(FormatError::WrongType {
                key: "rationale",
                expected: "a string",
            })
        }
    };
    let action_value = obj.get("action").ok_or(FormatError::MissingKey("action"))?;
    if mode == ParseMode::Strict {
        if let Some(extra) = obj.keys().find(|k| *k != "rationale" && *k != "action") {
            return Err(FormatError::UnexpectedKey(extra.clone()));
        }
    }
    let action = Action::from_value(action_value, mode)?;
    if mode == ParseMode::Strict && rationale.trim().is_empty() {
        return Err(FormatError::EmptyRationale);
    }
    Ok(ModelResponse {
        rationale: rationale.clone(),
        action,
    })
}

/// Returns the first balanced `{...}` span in `text` that parses as a JSON object.
fn extract_first_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(&bytes[start..]) else {
            continue;
        };
        if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..start + end]) {
            return Some(v);
        }
    }
    None
}

/// Length of the balanced brace group starting at `bytes[0] == b'{'`, tracking
/// JSON string literals so braces inside strings are ignored.
fn balanced_end(bytes: &[u8]) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Canonical compact encoding: `type` first, then the variant's fields in
/// grammar order, no whitespace.
pub fn serialize_action(action: &Action) -> String {
    serde_json::to_string(action).expect("action serialization is infallible")
}

/// Bucket of a raw model output in the predicted-type distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputBucket {
    Input,
    Click,
    Scroll,
    /// Well-formed JSON whose action type is outside the grammar.
    Others,
    IncorrectFormat,
}

impl OutputBucket {
    pub const ALL: [OutputBucket; 5] = [
        OutputBucket::Input,
        OutputBucket::Click,
        OutputBucket::Scroll,
        OutputBucket::Others,
        OutputBucket::IncorrectFormat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputBucket::Input => "input",
            OutputBucket::Click => "click",
            OutputBucket::Scroll => "scroll",
            OutputBucket::Others => "others",
            OutputBucket::IncorrectFormat => "incorrect_format",
        }
    }

    pub fn action_type(self) -> Option<ActionType> {
        match self {
            OutputBucket::Input => Some(ActionType::Input),
            OutputBucket::Click => Some(ActionType::Click),
            OutputBucket::Scroll => Some(ActionType::Scroll),
            OutputBucket::Others | OutputBucket::IncorrectFormat => None,
        }
    }
}

impl From<ActionType> for OutputBucket {
    fn from(t: ActionType) -> Self {
        match t {
            ActionType::Input => OutputBucket::Input,
            ActionType::Click => OutputBucket::Click,
            ActionType::Scroll => OutputBucket::Scroll,
        }
    }
}

impl fmt::Display for OutputBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strict-mode classification of a raw output. Never fails.
pub fn classify_raw_type(raw: &str) -> OutputBucket {
    classify_raw_type_with(raw, ParseMode::Strict)
}

pub fn classify_raw_type_with(raw: &str, mode: ParseMode) -> OutputBucket {
    classify_parse_result(&parse_response(raw, mode))
}

pub(crate) fn classify_parse_result(result: &Result<ModelResponse, FormatError>) -> OutputBucket {
    match result {
        Ok(resp) => resp.action.action_type().into(),
        Err(FormatError::UnknownActionType(_)) => OutputBucket::Others,
        Err(_) => OutputBucket::IncorrectFormat,
    }
}
