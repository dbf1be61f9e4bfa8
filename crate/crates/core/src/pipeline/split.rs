//! Session-level train/test split and per-split action-type counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::examples::TrainingExample;
use crate::action::ActionType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeCounts {
    pub input: usize,
    pub click: usize,
    pub scroll: usize,
}

impl TypeCounts {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a TrainingExample>) -> Self {
        let mut c = TypeCounts::default();
        for e in examples {
            match e.target.action.action_type() {
                ActionType::Input => c.input += 1,
                ActionType::Click => c.click += 1,
                ActionType::Scroll => c.scroll += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.input + self.click + self.scroll
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: TypeCounts,
    pub test: TypeCounts,
}

impl SplitCounts {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,input,click,scroll\n");
        for (name, c) in [("train", self.train), ("test", self.test)] {
            let _ = writeln!(out, "{name},{},{},{}", c.input, c.click, c.scroll);
        }
        out
    }

    /// Plain-text table for terminal output.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}{:>8}{:>8}{:>8}\n", "Dataset Split", "input", "click", "scroll");
        for (name, c) in [("Train", self.train), ("Test", self.test)] {
            let _ = writeln!(out, "{name:<14}{:>8}{:>8}{:>8}", c.input, c.click, c.scroll);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
    pub counts: SplitCounts,
}

fn session_key(seed: u64, session_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(session_id.as_bytes());
    h.finalize().into()
}

/// Assigns whole sessions to train or test. Sessions are ordered by a seeded
/// hash of their id and the first `round(ratio * sessions)` go to train.
/// Example order within each side follows the input order.
pub fn split_dataset(examples: Vec<TrainingExample>, seed: u64, ratio: f64) -> DatasetSplit {
    assert!((0.0..=1.0).contains(&ratio), "split ratio must be within [0, 1]");
    let sessions: BTreeSet<&str> = examples.iter().map(|e| e.session_id.as_str()).collect();
    let mut ordered: Vec<(&str, [u8; 32])> = sessions
        .into_iter()
        .map(|s| (s, session_key(seed, s)))
        .collect();
    ordered.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n_train = (ratio * ordered.len() as f64).round() as usize;
    let in_train: BTreeMap<String, bool> = ordered
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.to_string(), i < n_train))
        .collect();

    let (train, test): (Vec<_>, Vec<_>) = examples
        .into_iter()
        .partition(|e| in_train[e.session_id.as_str()]);
    let counts = SplitCounts {
        train: TypeCounts::from_examples(&train),
        test: TypeCounts::from_examples(&test),
    };
    DatasetSplit { train, test, counts }
}
