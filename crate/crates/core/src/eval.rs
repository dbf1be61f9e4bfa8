//! Next-action evaluation: exact match, action-type accuracy, macro-F1 and the
//! predicted-type distribution.
//!
//! Every record counts in every denominator, including outputs that fail to
//! parse or name an action outside the grammar. Those are credited to no class
//! for F1 but still count toward the true class's support.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{classify_parse_result, parse_response, Action, ActionType, OutputBucket, ParseMode};
use crate::matching::MatcherConfig;

/// One line of a predictions log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub session_id: String,
    pub step: usize,
    pub raw_output: String,
    pub ground_truth: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub parse_mode: ParseMode,
    pub matcher: MatcherConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty prediction set")]
    EmptyEvaluation,
}

/// True iff every component of the predicted action agrees with ground truth.
pub fn exact_match(pred: Option<&Action>, gt: &Action, matcher: &MatcherConfig) -> bool {
    match (pred, gt) {
        (Some(Action::Scroll), Action::Scroll) => true,
        (
            Some(Action::Click { click_type: pc, name: pn }),
            Action::Click { click_type: gc, name: gn },
        ) => pc == gc && matcher.name.matches(pn, gn),
        (Some(Action::Input { text: pt }), Action::Input { text: gt }) => matcher.text.matches(pt, gt),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub predicted: usize,
    pub true_positive: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(support: usize, predicted: usize, true_positive: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(true_positive, predicted);
        let recall = ratio(true_positive, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            support,
            predicted,
            true_positive,
            precision,
            recall,
            f1,
        }
    }
}

/// Record counts per output bucket.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub input: usize,
    pub click: usize,
    pub scroll: usize,
    pub others: usize,
    pub incorrect_format: usize,
}

impl Distribution {
    pub fn from_buckets(buckets: impl IntoIterator<Item = OutputBucket>) -> Self {
        let mut d = Distribution::default();
        for b in buckets {
            *d.count_mut(b) += 1;
        }
        d
    }

    fn count_mut(&mut self, b: OutputBucket) -> &mut usize {
        match b {
            OutputBucket::Input => &mut self.input,
            OutputBucket::Click => &mut self.click,
            OutputBucket::Scroll => &mut self.scroll,
            OutputBucket::Others => &mut self.others,
            OutputBucket::IncorrectFormat => &mut self.incorrect_format,
        }
    }

    pub fn count(&self, b: OutputBucket) -> usize {
        match b {
            OutputBucket::Input => self.input,
            OutputBucket::Click => self.click,
            OutputBucket::Scroll => self.scroll,
            OutputBucket::Others => self.others,
            OutputBucket::IncorrectFormat => self.incorrect_format,
        }
    }

    pub fn total(&self) -> usize {
        OutputBucket::ALL.iter().map(|&b| self.count(b)).sum()
    }

    pub fn fraction(&self, b: OutputBucket) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.count(b) as f64 / n as f64,
        }
    }

    /// Percentages in hundredths of a percent, in [`OutputBucket::ALL`] order.
    /// Largest-remainder rounding so the five values sum to exactly 100.00%.
    pub fn percent_hundredths(&self) -> [u64; 5] {
        let total = self.total() as u64;
        let mut out = [0u64; 5];
        if total == 0 {
            return out;
        }
        let mut remainders = [(0u64, 0usize); 5];
        for (i, &b) in OutputBucket::ALL.iter().enumerate() {
            let scaled = self.count(b) as u64 * 10_000;
            out[i] = scaled / total;
            remainders[i] = (scaled % total, i);
        }
        let deficit = 10_000 - out.iter().sum::<u64>();
        // largest remainder first; ties go to the earlier bucket
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take(deficit as usize) {
            out[i] += 1;
        }
        out
    }

    /// Percentages rendered as in the results tables: two decimals, bare `0%` for empty buckets.
    pub fn percent_labels(&self) -> [String; 5] {
        let hundredths = self.percent_hundredths();
        std::array::from_fn(|i| {
            if self.count(OutputBucket::ALL[i]) == 0 {
                "0%".to_string()
            } else {
                format!("{}.{:02}%", hundredths[i] / 100, hundredths[i] % 100)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub exact_match_acc: f64,
    pub type_acc: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<ActionType, ClassMetrics>,
    pub distribution: Distribution,
}

struct Scored {
    bucket: OutputBucket,
    exact: bool,
    gt_type: ActionType,
}

fn score_record(r: &PredictionRecord, cfg: &EvalConfig) -> Scored {
    let parsed = parse_response(&r.raw_output, cfg.parse_mode);
    let bucket = classify_parse_result(&parsed);
    let pred = parsed.as_ref().ok().map(|p| &p.action);
    Scored {
        bucket,
        exact: exact_match(pred, &r.ground_truth, &cfg.matcher),
        gt_type: r.ground_truth.action_type(),
    }
}

pub fn compute_metrics(records: &[PredictionRecord], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let scored: Vec<Scored> = records.par_iter().map(|r| score_record(r, cfg)).collect();

    let n = scored.len();
    let exact = scored.iter().filter(|s| s.exact).count();
    let type_correct = scored
        .iter()
        .filter(|s| s.bucket.action_type() == Some(s.gt_type))
        .count();

    let mut per_class = BTreeMap::new();
    for class in ActionType::ALL {
        let support = scored.iter().filter(|s| s.gt_type == class).count();
        let predicted = scored
            .iter()
            .filter(|s| s.bucket.action_type() == Some(class))
            .count();
        let tp = scored
            .iter()
            .filter(|s| s.gt_type == class && s.bucket.action_type() == Some(class))
            .count();
        per_class.insert(class, ClassMetrics::from_counts(support, predicted, tp));
    }
    // classes absent from both ground truth and predictions carry no signal
    let active: Vec<f64> = per_class
        .values()
        .filter(|m| m.support > 0 || m.predicted > 0)
        .map(|m| m.f1)
        .collect();
    let macro_f1 = active.iter().sum::<f64>() / active.len() as f64;

    Ok(EvalReport {
        records: n,
        exact_match_acc: exact as f64 / n as f64,
        type_acc: type_correct as f64 / n as f64,
        macro_f1,
        per_class,
        distribution: Distribution::from_buckets(scored.iter().map(|s| s.bucket)),
    })
}

pub fn distribution_table(records: &[PredictionRecord], mode: ParseMode) -> Result<Distribution, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(Distribution::from_buckets(
        records
            .iter()
            .map(|r| classify_parse_result(&parse_response(&r.raw_output, mode))),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub const METRIC_COLUMNS: [&str; 3] = ["Next Action Pred. Acc.", "Action Type Acc.", "Action Type F1"];
pub const DISTRIBUTION_COLUMNS: [&str; 5] = ["Input", "Click", "Scroll", "Others", "Incorrect Format"];

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn table_row(cells: impl IntoIterator<Item = String>) -> String {
    let cells: Vec<String> = cells.into_iter().collect();
    format!("| {} |\n", cells.join(" | "))
}

fn render_markdown(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# Next action prediction report\n\n");
    let _ = writeln!(out, "Records: {}\n", r.records);

    out.push_str(&table_row(METRIC_COLUMNS.iter().map(|s| s.to_string())));
    out.push_str(&table_row(METRIC_COLUMNS.iter().map(|_| "---".to_string())));
    out.push_str(&table_row([pct(r.exact_match_acc), pct(r.type_acc), pct(r.macro_f1)]));

    out.push_str("\n## Per-class action type metrics\n\n");
    out.push_str("| Class | Support | Predicted | Precision | Recall | F1 |\n");
    out.push_str("| --- | --- | --- | --- | --- | --- |\n");
    for (class, m) in &r.per_class {
        out.push_str(&table_row([
            class.to_string(),
            m.support.to_string(),
            m.predicted.to_string(),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
        ]));
    }

    out.push_str("\n## Distribution of predicted action types\n\n");
    out.push_str(&table_row(DISTRIBUTION_COLUMNS.iter().map(|s| s.to_string())));
    out.push_str(&table_row(DISTRIBUTION_COLUMNS.iter().map(|_| "---".to_string())));
    out.push_str(&table_row(r.distribution.percent_labels()));

    out.push_str(
        "\nNotes: unparseable and out-of-grammar outputs are included in every denominator. \
         Action Type F1 is the unweighted mean over action types that occur in the ground truth \
         or the predictions.\n",
    );
    out
}

fn render_csv(r: &EvalReport) -> String {
    let mut out = String::new();
    let header: Vec<&str> = METRIC_COLUMNS
        .iter()
        .chain(DISTRIBUTION_COLUMNS.iter())
        .copied()
        .chain(["Records"])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let mut row = vec![
        format!("{:.2}", r.exact_match_acc * 100.0),
        format!("{:.2}", r.type_acc * 100.0),
        format!("{:.2}", r.macro_f1 * 100.0),
    ];
    row.extend(
        r.distribution
            .percent_hundredths()
            .iter()
            .map(|h| format!("{}.{:02}", h / 100, h % 100)),
    );
    row.push(r.records.to_string());
    out.push_str(&row.join(","));
    out.push('\n');
    out
}
