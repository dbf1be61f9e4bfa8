//! Raw recorded sessions to model-ready examples.
//!
//! A raw session (one JSON object per line of the input file) holds the DOM
//! snapshots captured while the shopper browsed, each with its viewport and
//! screenshot reference, plus the time-ordered event stream. Each event names
//! the snapshot that was on screen when it fired.
//!
//! Processing a session:
//! 1. distill events into actions ([`distill`]);
//! 2. render the snapshot behind each action as simplified, viewport-pruned
//!    HTML ([`dom`]);
//! 3. build windowed-history examples ([`examples`]).
//!
//! Sessions are independent and are processed in parallel.

pub mod distill;
pub mod dom;
pub mod examples;
pub mod split;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use distill::{
    default_click_rules, distill_actions, distill_events, ClickRule, DistillError, DistilledAction,
    EventKind, NoDom, NodeLookup, RawEvent,
};
pub use dom::{prune_to_viewport, render_html, simplify_html, DomNode, Rect, SimplifyConfig, Viewport};
pub use examples::{build_examples, HistoryEntry, HistoryWindow, Query, SessionStep, Target, TrainingExample};
pub use split::{split_dataset, DatasetSplit, SplitCounts, TypeCounts};

/// Characters per query; roughly a 25k-token context at ~4 characters per token.
pub const DEFAULT_CONTEXT_BUDGET_CHARS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_id: String,
    pub viewport: Viewport,
    pub screenshot_ref: String,
    pub dom: DomNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub session_id: String,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub history_window: HistoryWindow,
    /// `None` disables the budget.
    pub context_budget_chars: Option<usize>,
    pub split_ratio: f64,
    pub seed: u64,
    pub simplify: SimplifyConfig,
    pub click_rules: Vec<ClickRule>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            history_window: HistoryWindow::default(),
            context_budget_chars: Some(DEFAULT_CONTEXT_BUDGET_CHARS),
            split_ratio: 0.8,
            seed: 0,
            simplify: SimplifyConfig::default(),
            click_rules: default_click_rules(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(PipelineError::BadRatio(self.split_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("session {session_id}: {source}")]
    Distill {
        session_id: String,
        source: DistillError,
    },
    #[error("session {session_id}: event {index} references unknown snapshot `{snapshot_id}`")]
    UnknownSnapshot {
        session_id: String,
        index: usize,
        snapshot_id: String,
    },
    #[error("session {session_id}: snapshot `{snapshot_id}` has a non-positive viewport")]
    BadViewport {
        session_id: String,
        snapshot_id: String,
    },
    #[error("session {session_id}: timestamp decreases at event {index}")]
    NonMonotonicTimestamps { session_id: String, index: usize },
    #[error("split ratio must be within [0, 1], got {0}")]
    BadRatio(f64),
}

struct SnapshotLookup<'a> {
    by_id: HashMap<&'a str, &'a Snapshot>,
}

impl NodeLookup for SnapshotLookup<'_> {
    fn node_for(&self, event: &RawEvent) -> Option<&DomNode> {
        let snap = self.by_id.get(event.snapshot_id.as_str())?;
        snap.dom.find(event.target.as_deref()?)
    }
}

/// Distills one raw session into observation/action steps.
pub fn process_session(raw: &RawSession, cfg: &PipelineConfig) -> Result<Vec<SessionStep>, PipelineError> {
    let session_id = &raw.session_id;
    let mut by_id = HashMap::new();
    for s in &raw.snapshots {
        if !s.viewport.is_valid() {
            return Err(PipelineError::BadViewport {
                session_id: session_id.clone(),
                snapshot_id: s.snapshot_id.clone(),
            });
        }
        by_id.insert(s.snapshot_id.as_str(), s);
    }
    for (index, pair) in raw.events.windows(2).enumerate() {
        if pair[1].timestamp_ms < pair[0].timestamp_ms {
            return Err(PipelineError::NonMonotonicTimestamps {
                session_id: session_id.clone(),
                index: index + 1,
            });
        }
    }
    for (index, e) in raw.events.iter().enumerate() {
        if !by_id.contains_key(e.snapshot_id.as_str()) {
            return Err(PipelineError::UnknownSnapshot {
                session_id: session_id.clone(),
                index,
                snapshot_id: e.snapshot_id.clone(),
            });
        }
    }

    let lookup = SnapshotLookup { by_id };
    let distilled = distill_events(&raw.events, &cfg.click_rules, &lookup).map_err(|source| {
        PipelineError::Distill {
            session_id: session_id.clone(),
            source,
        }
    })?;

    let mut rendered: HashMap<&str, String> = HashMap::new();
    let mut steps = Vec::with_capacity(distilled.len());
    for (i, d) in distilled.into_iter().enumerate() {
        let snapshot = lookup.by_id[raw.events[d.first_event].snapshot_id.as_str()];
        let html = rendered
            .entry(snapshot.snapshot_id.as_str())
            .or_insert_with(|| {
                let simplified = simplify_html(&snapshot.dom, &cfg.simplify);
                prune_to_viewport(&simplified, &snapshot.viewport)
                    .map(|n| render_html(&n))
                    .unwrap_or_default()
            })
            .clone();
        steps.push(SessionStep {
            session_id: session_id.clone(),
            step: i + 1,
            pruned_html: html,
            screenshot_ref: snapshot.screenshot_ref.clone(),
            action: d.action,
            rationale: d.rationale,
        });
    }
    Ok(steps)
}

/// Full preparation: distill every session, build examples, split by session.
pub fn prepare(sessions: &[RawSession], cfg: &PipelineConfig) -> Result<DatasetSplit, PipelineError> {
    cfg.validate()?;
    let per_session: Vec<Vec<TrainingExample>> = sessions
        .par_iter()
        .map(|s| {
            let steps = process_session(s, cfg)?;
            Ok(build_examples(&steps, cfg.history_window, cfg.context_budget_chars))
        })
        .collect::<Result<_, PipelineError>>()?;
    let examples = per_session.into_iter().flatten().collect();
    Ok(split_dataset(examples, cfg.seed, cfg.split_ratio))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSONL file of `T`, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Writes one compact JSON object per line, LF-terminated.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("in-memory values serialize");
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_raw_sessions(path: &Path) -> Result<Vec<RawSession>, PipelineError> {
    read_jsonl(path)
}

pub fn emit_jsonl(examples: &[TrainingExample], path: &Path) -> Result<(), PipelineError> {
    write_jsonl(examples, path)
}

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>, PipelineError> {
    read_jsonl(path)
}
