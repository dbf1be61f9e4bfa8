//! Windowed-history training examples.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::action::{serialize_action, Action};

/// One step of a processed session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStep {
    pub session_id: String,
    /// 1-based position within the session.
    pub step: usize,
    pub pruned_html: String,
    pub screenshot_ref: String,
    pub action: Action,
    pub rationale: Option<String>,
}

/// How many past steps a query carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryWindow {
    Last(usize),
    Full,
}

impl Default for HistoryWindow {
    fn default() -> Self {
        HistoryWindow::Last(3)
    }
}

impl fmt::Display for HistoryWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryWindow::Last(k) => write!(f, "{k}"),
            HistoryWindow::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for HistoryWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "inf" | "all" => Ok(HistoryWindow::Full),
            _ => s
                .parse()
                .map(HistoryWindow::Last)
                .map_err(|_| format!("history window must be a number or `full`, got `{s}`")),
        }
    }
}

impl Serialize for HistoryWindow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            HistoryWindow::Last(k) => s.serialize_u64(*k as u64),
            HistoryWindow::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for HistoryWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(usize),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(k) => Ok(HistoryWindow::Last(k)),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub html: String,
    pub action: Action,
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub history: Vec<HistoryEntry>,
    pub current_html: String,
    pub screenshot_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub rationale: Option<String>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub session_id: String,
    pub step: usize,
    pub query: Query,
    pub target: Target,
}

impl Query {
    /// Size in characters counted against the context budget.
    pub fn char_len(&self) -> usize {
        let history: usize = self
            .history
            .iter()
            .map(|h| {
                h.html.chars().count()
                    + serialize_action(&h.action).chars().count()
                    + h.rationale.as_deref().map_or(0, |r| r.chars().count())
            })
            .sum();
        history + self.current_html.chars().count()
    }

    /// Shrinks the query to at most `budget` characters: drops the oldest
    /// history entries (keeping the most recent one), then cuts HTML from the
    /// top, oldest first, ending with the current page.
    pub fn fit_to_budget(&mut self, budget: usize) {
        while self.char_len() > budget && self.history.len() > 1 {
            self.history.remove(0);
        }
        let mut excess = self.char_len().saturating_sub(budget);
        for html in self
            .history
            .iter_mut()
            .map(|h| &mut h.html)
            .chain(std::iter::once(&mut self.current_html))
        {
            if excess == 0 {
                break;
            }
            let len = html.chars().count();
            let cut = excess.min(len);
            *html = html.chars().skip(cut).collect();
            excess -= cut;
        }
    }
}

/// One example per step; the history holds steps `max(1, t-K) .. t-1`.
pub fn build_examples(
    session: &[SessionStep],
    window: HistoryWindow,
    budget_chars: Option<usize>,
) -> Vec<TrainingExample> {
    session
        .iter()
        .enumerate()
        .map(|(pos, step)| {
            let start = match window {
                HistoryWindow::Full => 0,
                HistoryWindow::Last(k) => pos.saturating_sub(k),
            };
            let history = session[start..pos]
                .iter()
                .filter(|h| h.session_id == step.session_id)
                .map(|h| HistoryEntry {
                    step: h.step,
                    html: h.pruned_html.clone(),
                    action: h.action.clone(),
                    rationale: h.rationale.clone(),
                })
                .collect();
            let mut query = Query {
                history,
                current_html: step.pruned_html.clone(),
                screenshot_ref: step.screenshot_ref.clone(),
            };
            if let Some(budget) = budget_chars {
                query.fit_to_budget(budget);
            }
            TrainingExample {
                session_id: step.session_id.clone(),
                step: step.step,
                query,
                target: Target {
                    rationale: step.rationale.clone(),
                    action: step.action.clone(),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(n: usize) -> Vec<SessionStep> {
        (1..=n)
            .map(|t| SessionStep {
                session_id: "s".into(),
                step: t,
                pruned_html: format!("<p>{t}</p>"),
                screenshot_ref: format!("s/{t}.png"),
                action: Action::Scroll,
                rationale: None,
            })
            .collect()
    }

    fn history_steps(e: &TrainingExample) -> Vec<usize> {
        e.query.history.iter().map(|h| h.step).collect()
    }

    #[test]
    fn single_step_has_no_history() {
        let ex = build_examples(&steps(1), HistoryWindow::default(), None);
        assert_eq!(ex.len(), 1);
        assert!(ex[0].query.history.is_empty());
    }

    #[test]
    fn window_of_three() {
        let ex = build_examples(&steps(5), HistoryWindow::Last(3), None);
        assert_eq!(history_steps(&ex[4]), vec![2, 3, 4]);
        assert_eq!(history_steps(&ex[1]), vec![1]);
        assert_eq!(ex[4].query.current_html, "<p>5</p>");
        assert_eq!(ex[4].query.screenshot_ref, "s/5.png");
    }

    #[test]
    fn full_window() {
        let ex = build_examples(&steps(5), HistoryWindow::Full, None);
        assert_eq!(history_steps(&ex[4]), vec![1, 2, 3, 4]);
    }

    #[test]
    fn zero_window() {
        let ex = build_examples(&steps(3), HistoryWindow::Last(0), None);
        assert!(ex.iter().all(|e| e.query.history.is_empty()));
    }

    #[test]
    fn window_parse() {
        assert_eq!("full".parse::<HistoryWindow>().unwrap(), HistoryWindow::Full);
        assert_eq!("7".parse::<HistoryWindow>().unwrap(), HistoryWindow::Last(7));
        assert!("x".parse::<HistoryWindow>().is_err());
        let w: HistoryWindow = serde_json::from_str("\"full\"").unwrap();
        assert_eq!(w, HistoryWindow::Full);
        let w: HistoryWindow = serde_json::from_str("2").unwrap();
        assert_eq!(w, HistoryWindow::Last(2));
    }

    #[test]
    fn budget_drops_oldest_then_truncates_from_top() {
        let mut s = steps(4);
        for (i, st) in s.iter_mut().enumerate() {
            st.pruned_html = format!("{}", i).repeat(10);
        }
        // each history entry: 10 html + 17 action json chars; current: 10
        let ex = build_examples(&s, HistoryWindow::Full, Some(40));
        let q = &ex[3].query;
        assert_eq!(history_steps(&ex[3]), vec![3]);
        assert_eq!(q.char_len(), 37);

        let ex = build_examples(&s, HistoryWindow::Full, Some(30));
        let q = &ex[3].query;
        assert_eq!(q.history.len(), 1);
        assert_eq!(q.history[0].html, "2222222222"[7..].to_string());
        assert_eq!(q.current_html, "3333333333");
        assert_eq!(q.char_len(), 30);

        let ex = build_examples(&s, HistoryWindow::Full, Some(5));
        let q = &ex[3].query;
        assert_eq!(q.history[0].html, "");
        assert_eq!(q.current_html, "");
    }
}
