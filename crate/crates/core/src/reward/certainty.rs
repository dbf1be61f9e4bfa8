//! Self-certainty of a generated sequence: the mean KL divergence of each
//! position's predictive distribution from the uniform distribution over the
//! vocabulary, scaled by `1 / (N * |V|)`.
//!
//! Rows travel either dense (one probability per vocabulary entry) or sparse
//! (top-k `(index, probability)` pairs plus the leftover `tail_mass`, which is
//! treated as spread evenly over the `|V| - k` uncovered entries).

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Tolerance on row normalization and on `tail_mass` consistency.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenRow {
    Dense(Vec<f64>),
    Sparse(SparseRow),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseRow {
    /// `(vocabulary index, probability)` pairs.
    pub top: Vec<(u32, f64)>,
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDistribution {
    pub vocab_size: usize,
    pub rows: Vec<TokenRow>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvalidDistribution {
    #[error("vocabulary size must be positive")]
    EmptyVocabulary,
    #[error("distribution has no positions")]
    NoPositions,
    #[error("row {row}: dense row has {len} entries, vocabulary has {vocab_size}")]
    RowLength { row: usize, len: usize, vocab_size: usize },
    #[error("row {row}: probability {value} outside [0, 1]")]
    OutOfRange { row: usize, value: f64 },
    #[error("row {row}: probabilities sum to {sum}, expected 1")]
    NotNormalized { row: usize, sum: f64 },
    #[error("row {row}: top-k size {k} must be smaller than vocabulary size {vocab_size}")]
    TopKTooLarge { row: usize, k: usize, vocab_size: usize },
    #[error("row {row}: vocabulary index {index} out of range")]
    IndexOutOfRange { row: usize, index: u32 },
    #[error("row {row}: vocabulary index {index} listed twice")]
    DuplicateIndex { row: usize, index: u32 },
    #[error("span {start}..{end} is not a non-empty range within {positions} positions")]
    BadSpan { start: usize, end: usize, positions: usize },
}

impl TokenDistribution {
    pub fn new(vocab_size: usize, rows: Vec<TokenRow>) -> Result<Self, InvalidDistribution> {
        let d = TokenDistribution { vocab_size, rows };
        d.validate()?;
        Ok(d)
    }

    pub fn positions(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<(), InvalidDistribution> {
        if self.vocab_size == 0 {
            return Err(InvalidDistribution::EmptyVocabulary);
        }
        if self.rows.is_empty() {
            return Err(InvalidDistribution::NoPositions);
        }
        for (row, r) in self.rows.iter().enumerate() {
            validate_row(row, r, self.vocab_size)?;
        }
        Ok(())
    }
}

fn check_probability(row: usize, value: f64) -> Result<(), InvalidDistribution> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(InvalidDistribution::OutOfRange { row, value })
    }
}

fn validate_row(row: usize, r: &TokenRow, vocab_size: usize) -> Result<(), InvalidDistribution> {
    match r {
        TokenRow::Dense(p) => {
            if p.len() != vocab_size {
                return Err(InvalidDistribution::RowLength {
                    row,
                    len: p.len(),
                    vocab_size,
                });
            }
            for &v in p {
                check_probability(row, v)?;
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(InvalidDistribution::NotNormalized { row, sum });
            }
        }
        TokenRow::Sparse(s) => {
            let k = s.top.len();
            if k >= vocab_size {
                return Err(InvalidDistribution::TopKTooLarge { row, k, vocab_size });
            }
            let mut seen = std::collections::HashSet::with_capacity(k);
            for &(index, p) in &s.top {
                if index as usize >= vocab_size {
                    return Err(InvalidDistribution::IndexOutOfRange { row, index });
                }
                if !seen.insert(index) {
                    return Err(InvalidDistribution::DuplicateIndex { row, index });
                }
                check_probability(row, p)?;
            }
            if !(-ROW_SUM_TOLERANCE..=1.0).contains(&s.tail_mass) {
                return Err(InvalidDistribution::OutOfRange {
                    row,
                    value: s.tail_mass,
                });
            }
            let sum = s.top.iter().map(|&(_, p)| p).sum::<f64>() + s.tail_mass;
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(InvalidDistribution::NotNormalized { row, sum });
            }
        }
    }
    Ok(())
}

/// `ln(ratio)`, with ratios within a few ulps of 1 taken as exactly 1 so
/// uniform rows contribute exactly zero.
fn ln_ratio(ratio: f64) -> f64 {
    if (ratio - 1.0).abs() <= 4.0 * f64::EPSILON {
        0.0
    } else {
        ratio.ln()
    }
}

/// `m * ln(m * |V|)` with `0 * ln 0 = 0`.
fn kl_term(mass: f64, vocab: f64) -> f64 {
    if mass <= 0.0 {
        0.0
    } else {
        mass * ln_ratio(mass * vocab)
    }
}

/// KL divergence of one row from the uniform distribution, natural log.
pub fn row_kl_to_uniform(row: &TokenRow, vocab_size: usize) -> f64 {
    let v = vocab_size as f64;
    let kl = match row {
        TokenRow::Dense(p) => p.iter().map(|&m| kl_term(m, v)).sum::<f64>(),
        TokenRow::Sparse(s) => {
            let covered: f64 = s.top.iter().map(|&(_, m)| kl_term(m, v)).sum();
            let uncovered = (vocab_size - s.top.len()) as f64;
            let tail = s.tail_mass.max(0.0);
            // (|V| - k) entries of tail / (|V| - k) each
            let tail_term = if tail > 0.0 {
                tail * ln_ratio(tail / uncovered * v)
            } else {
                0.0
            };
            covered + tail_term
        }
    };
    kl.max(0.0)
}

/// Self-certainty over every position.
pub fn self_certainty(d: &TokenDistribution) -> Result<f64, InvalidDistribution> {
    self_certainty_over(d, 0..d.rows.len())
}

/// Self-certainty restricted to positions `span` (e.g. the rationale tokens).
pub fn self_certainty_over(
    d: &TokenDistribution,
    span: Range<usize>,
) -> Result<f64, InvalidDistribution> {
    d.validate()?;
    if span.start >= span.end || span.end > d.rows.len() {
        return Err(InvalidDistribution::BadSpan {
            start: span.start,
            end: span.end,
            positions: d.rows.len(),
        });
    }
    let n = span.len() as f64;
    let total: f64 = d.rows[span]
        .iter()
        .map(|r| row_kl_to_uniform(r, d.vocab_size))
        .sum();
    Ok(total / (n * d.vocab_size as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(v: usize, rows: &[&[f64]]) -> TokenDistribution {
        TokenDistribution::new(v, rows.iter().map(|r| TokenRow::Dense(r.to_vec())).collect()).unwrap()
    }

    #[test]
    fn uniform_is_zero() {
        let d = dense(4, &[&[0.25; 4]]);
        assert_eq!(self_certainty(&d).unwrap(), 0.0);
        let v = 49;
        let d = dense(v, &[&vec![1.0 / v as f64; v]]);
        assert_eq!(self_certainty(&d).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_four() {
        let d = dense(4, &[&[1.0, 0.0, 0.0, 0.0]]);
        let s = self_certainty(&d).unwrap();
        // ln(4)/4
        assert!((s - 0.346_573_590_279_972_6).abs() < 1e-12, "{s}");
    }

    #[test]
    fn two_peaked_rows() {
        let d = dense(4, &[&[0.7, 0.1, 0.1, 0.1], &[0.7, 0.1, 0.1, 0.1]]);
        let s = self_certainty(&d).unwrap();
        // per-row KL = 0.7 ln 2.8 + 0.3 ln 0.4 = 0.445846...; s = 2 * KL / 8
        assert!((s - 0.111_461_5).abs() < 1e-6, "{s}");
    }

    #[test]
    fn sparse_matches_dense_with_uniform_tail() {
        let dense_row = TokenRow::Dense(vec![0.6, 0.1, 0.1, 0.1, 0.1]);
        let sparse_row = TokenRow::Sparse(SparseRow {
            top: vec![(0, 0.6)],
            tail_mass: 0.4,
        });
        let a = row_kl_to_uniform(&dense_row, 5);
        let b = row_kl_to_uniform(&sparse_row, 5);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn span_restricts_positions() {
        let d = dense(4, &[&[0.25; 4], &[1.0, 0.0, 0.0, 0.0]]);
        assert_eq!(self_certainty_over(&d, 0..1).unwrap(), 0.0);
        let only_peak = self_certainty_over(&d, 1..2).unwrap();
        assert!((only_peak - 4f64.ln() / 4.0).abs() < 1e-12);
        assert!(matches!(
            self_certainty_over(&d, 1..1),
            Err(InvalidDistribution::BadSpan { .. })
        ));
        assert!(self_certainty_over(&d, 0..3).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        let bad = [
            TokenDistribution { vocab_size: 4, rows: vec![TokenRow::Dense(vec![0.5, 0.5, 0.5, 0.0])] },
            TokenDistribution { vocab_size: 4, rows: vec![TokenRow::Dense(vec![1.0])] },
            TokenDistribution { vocab_size: 4, rows: vec![TokenRow::Dense(vec![1.5, -0.5, 0.0, 0.0])] },
            TokenDistribution { vocab_size: 4, rows: vec![] },
            TokenDistribution {
                vocab_size: 2,
                rows: vec![TokenRow::Sparse(SparseRow { top: vec![(0, 0.5), (1, 0.5)], tail_mass: 0.0 })],
            },
            TokenDistribution {
                vocab_size: 4,
                rows: vec![TokenRow::Sparse(SparseRow { top: vec![(0, 0.5)], tail_mass: 0.4 })],
            },
            TokenDistribution {
                vocab_size: 4,
                rows: vec![TokenRow::Sparse(SparseRow { top: vec![(7, 0.5)], tail_mass: 0.5 })],
            },
            TokenDistribution {
                vocab_size: 4,
                rows: vec![TokenRow::Sparse(SparseRow { top: vec![(1, 0.25), (1, 0.25)], tail_mass: 0.5 })],
            },
        ];
        for d in bad {
            assert!(self_certainty(&d).is_err(), "{d:?}");
        }
    }

    #[test]
    fn wire_format() {
        let json = r#"{"vocab_size":4,"rows":[[0.25,0.25,0.25,0.25],{"top":[[2,0.7]],"tail_mass":0.3}]}"#;
        let d: TokenDistribution = serde_json::from_str(json).unwrap();
        assert_eq!(d.positions(), 2);
        assert!(matches!(d.rows[1], TokenRow::Sparse(_)));
        assert_eq!(serde_json::to_string(&d).unwrap(), json);
    }
}
