//! Parsing LLM responses into connective probability vectors.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of connectives the answer vector must cover.
pub const VECTOR_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ParseFailure {
    #[error("no bracketed numeric vector found in response")]
    NoVectorFound,
    #[error("vector has {0} entries, expected 28")]
    WrongLength(usize),
    #[error("negative entry at position {0}")]
    NegativeEntry(usize),
    #[error("entries sum to {0}, expected 1 within 1e-3")]
    BadSum(f64),
}

/// A validated 28-entry probability vector in connective (prompt) order,
/// renormalized to unit sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveVector {
    pub values: Vec<f64>,
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").unwrap())
}

/// Extracts the first bracketed numeric list from a response. Accepts iff
/// it holds exactly 28 finite non-negative numbers whose sum is within
/// 1e-3 of 1; the accepted vector is renormalized exactly.
pub fn parse_vector(response: &str) -> Result<ConnectiveVector, ParseFailure> {
    for cap in bracket_re().captures_iter(response) {
        let inner = cap.get(1).unwrap().as_str();
        let cells: Vec<&str> = inner
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        if cells.is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(cells.len());
        let mut numeric = true;
        for c in &cells {
            match c.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    numeric = false;
                    break;
                }
            }
        }
        if !numeric {
            continue; // not a numeric list (e.g. the connective list itself)
        }
        if values.len() != VECTOR_LEN {
            return Err(ParseFailure::WrongLength(values.len()));
        }
        if let Some(i) = values.iter().position(|v| *v < 0.0) {
            return Err(ParseFailure::NegativeEntry(i));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(ParseFailure::BadSum(sum));
        }
        for v in &mut values {
            *v /= sum;
        }
        return Ok(ConnectiveVector { values });
    }
    Err(ParseFailure::NoVectorFound)
}

#[cfg(test)]
mod tests {
    use super::*;

    // The published template's answer vectors, verbatim.
    const FIGURE_ANSWERS: [&str; 4] = [
        "[0.0, 0.1, 0.0,	0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.3, 0.2, 0.0, 0.0, 0.0, 0.0]",
        "[0.0, 0.0, 0.0, 0.0, 0.111, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.111, 0.0, 0.0, 0.667, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.111, 0.0, 0.0, 0.0, 0.0]",
        "[0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.5]",
        "[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]",
    ];

    #[test]
    fn accepts_template_answers_verbatim() {
        for answer in FIGURE_ANSWERS {
            let v = parse_vector(answer).unwrap();
            assert_eq!(v.values.len(), 28);
            assert!((v.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn accepts_vector_embedded_in_prose() {
        let text = format!("Sure, here is my answer:\n{}\nLet me know!", FIGURE_ANSWERS[0]);
        assert!(parse_vector(&text).is_ok());
    }

    #[test]
    fn wrong_length() {
        let cells = vec!["0.1"; 27].join(", ");
        assert_eq!(
            parse_vector(&format!("[{cells}]")),
            Err(ParseFailure::WrongLength(27))
        );
    }

    #[test]
    fn bad_sum() {
        let mut values = vec![0.0; 28];
        values[0] = 0.8;
        let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        assert!(matches!(
            parse_vector(&format!("[{}]", cells.join(", "))),
            Err(ParseFailure::BadSum(_))
        ));
    }

    #[test]
    fn negative_entry() {
        let mut values = vec![0.0f64; 28];
        values[0] = 1.5;
        values[3] = -0.5;
        let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        assert_eq!(
            parse_vector(&format!("[{}]", cells.join(", "))),
            Err(ParseFailure::NegativeEntry(3))
        );
    }

    #[test]
    fn no_vector() {
        assert_eq!(parse_vector("I cannot answer that."), Err(ParseFailure::NoVectorFound));
        assert_eq!(
            parse_vector("[\"also\", \"then\"] are my picks"),
            Err(ParseFailure::NoVectorFound)
        );
    }

    #[test]
    fn near_unit_sum_is_renormalized() {
        let mut values = vec![0.0f64; 28];
        values[0] = 0.5004;
        values[1] = 0.5001;
        let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let v = parse_vector(&format!("[{}]", cells.join(", "))).unwrap();
        assert!((v.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
