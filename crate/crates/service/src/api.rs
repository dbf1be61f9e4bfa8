//! Wire types for `/v1/score` and the item scorer shared with offline scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shopsim::action::FormatError;
use shopsim::reward::{ComponentMatches, RewardError, WeightOverrides};
use shopsim::{score_response, Action, OutputBucket, ParseMode, RewardBreakdown, RewardConfig, TokenDistribution};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    /// Items stay raw JSON so one bad item cannot fail envelope parsing.
    pub items: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_overrides: Option<WeightOverrides>,
}

/// One validated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreItem {
    pub response_text: String,
    pub ground_truth: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_distribution: Option<TokenDistribution>,
    /// Half-open `[start, end)` positions of the rationale tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_span: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub index: usize,
    pub breakdown: RewardBreakdown,
    pub parse_bucket: OutputBucket,
    pub components: ComponentMatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemErrorKind {
    InvalidItem,
    InvalidDistribution,
    InvalidSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemErrorBody {
    pub kind: ItemErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub index: usize,
    pub error: ItemErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemResult {
    Scored(ScoredItem),
    Error(ItemError),
}

impl ItemResult {
    pub fn index(&self) -> usize {
        match self {
            ItemResult::Scored(s) => s.index,
            ItemResult::Error(e) => e.index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub service_version: String,
    pub results: Vec<ItemResult>,
}

/// Batch-level rejection of a request.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RequestError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("batch must contain at least one item")]
    EmptyBatch,
    #[error("batch of {size} items exceeds the limit of {max}")]
    TooLarge { size: usize, max: usize },
    #[error("item {index}: ground_truth {message}")]
    GroundTruth { index: usize, message: String },
    #[error("invalid config_overrides: {0}")]
    Overrides(String),
}

fn ground_truth_of(index: usize, item: &Value) -> Result<Action, RequestError> {
    let gt = item
        .as_object()
        .ok_or_else(|| RequestError::GroundTruth {
            index,
            message: "missing: item is not an object".into(),
        })?
        .get("ground_truth")
        .ok_or_else(|| RequestError::GroundTruth {
            index,
            message: "is missing".into(),
        })?;
    Action::from_value(gt, ParseMode::Strict).map_err(|e: FormatError| RequestError::GroundTruth {
        index,
        message: format!("is not a valid action: {e}"),
    })
}

fn item_error(index: usize, kind: ItemErrorKind, message: impl Into<String>) -> ItemResult {
    ItemResult::Error(ItemError {
        index,
        error: ItemErrorBody {
            kind,
            message: message.into(),
        },
    })
}

/// Validates one raw item. The ground truth is known to be valid.
fn decode_item(index: usize, raw: &Value) -> Result<ScoreItem, ItemResult> {
    let mut obj = raw.as_object().cloned().unwrap_or_default();
    let dist = obj.remove("token_distribution").filter(|v| !v.is_null());
    let mut item: ScoreItem = serde_json::from_value(Value::Object(obj))
        .map_err(|e| item_error(index, ItemErrorKind::InvalidItem, e.to_string()))?;
    if let Some(d) = dist {
        let d: TokenDistribution = serde_json::from_value(d)
            .map_err(|e| item_error(index, ItemErrorKind::InvalidDistribution, e.to_string()))?;
        item.token_distribution = Some(d);
    }
    Ok(item)
}

/// Scores one validated item.
pub fn score_item(index: usize, item: &ScoreItem, cfg: &RewardConfig) -> ItemResult {
    let span = item.rationale_span.map(|[a, b]| a..b);
    if let (Some(span), None) = (&span, &item.token_distribution) {
        return item_error(
            index,
            ItemErrorKind::InvalidSpan,
            format!("rationale_span {}..{} given without a token_distribution", span.start, span.end),
        );
    }
    match score_response(
        &item.response_text,
        item.token_distribution.as_ref(),
        span,
        &item.ground_truth,
        cfg,
    ) {
        Ok(s) => ItemResult::Scored(ScoredItem {
            index,
            breakdown: s.breakdown,
            parse_bucket: s.parse_bucket,
            components: s.components,
        }),
        Err(RewardError::Distribution(e @ shopsim::reward::InvalidDistribution::BadSpan { .. })) => {
            item_error(index, ItemErrorKind::InvalidSpan, e.to_string())
        }
        Err(e) => item_error(index, ItemErrorKind::InvalidDistribution, e.to_string()),
    }
}

/// Validates the request envelope and scores every item in request order.
pub fn score_request(
    request: &ScoreRequest,
    base: &RewardConfig,
    max_batch: usize,
) -> Result<Vec<ItemResult>, RequestError> {
    if request.items.is_empty() {
        return Err(RequestError::EmptyBatch);
    }
    if request.items.len() > max_batch {
        return Err(RequestError::TooLarge {
            size: request.items.len(),
            max: max_batch,
        });
    }
    let cfg = match &request.config_overrides {
        Some(o) => {
            let cfg = o.apply(base);
            cfg.validate().map_err(|e| RequestError::Overrides(e.to_string()))?;
            cfg
        }
        None => base.clone(),
    };
    for (index, item) in request.items.iter().enumerate() {
        ground_truth_of(index, item)?;
    }
    Ok(request
        .items
        .par_iter()
        .enumerate()
        .map(|(index, raw)| match decode_item(index, raw) {
            Ok(item) => score_item(index, &item, &cfg),
            Err(err) => err,
        })
        .collect())
}

/// Parses a request body. Anything other than a JSON object with an `items`
/// array (and optional `config_overrides`) is malformed.
pub fn parse_request(body: &[u8]) -> Result<ScoreRequest, RequestError> {
    serde_json::from_slice(body).map_err(|e| RequestError::Malformed(e.to_string()))
}
