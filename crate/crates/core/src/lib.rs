//! Tools for simulating web-shopper behavior: session preprocessing, rationale
//! annotation, hierarchical reward scoring and offline evaluation.

pub mod action;
pub mod annotate;
pub mod eval;
pub mod matching;
pub mod pipeline;
pub mod reward;

pub use action::{parse_response, serialize_action, Action, ActionType, ClickType, ModelResponse, OutputBucket, ParseMode};
pub use reward::{score_response, total_reward, RewardBreakdown, RewardConfig, TokenDistribution};
