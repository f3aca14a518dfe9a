use serde::{Deserialize, Serialize};

use crate::markup::normalize;

/// A gold answer, optionally with accepted aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswer {
    One(String),
    Aliases(Vec<String>),
}

impl GoldAnswer {
    fn found_in(&self, normalized_answer: &str) -> bool {
        let hit = |a: &String| {
            let a = normalize(a);
            !a.is_empty() && normalized_answer.contains(&a)
        };
        match self {
            GoldAnswer::One(a) => hit(a),
            GoldAnswer::Aliases(list) => list.iter().any(hit),
        }
    }
}

/// A yes/no label, written either as a boolean or as "yes"/"no".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value")]
pub struct GoldLabel(pub bool);

impl TryFrom<serde_json::Value> for GoldLabel {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        match &v {
            serde_json::Value::Bool(b) => Ok(GoldLabel(*b)),
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("yes") => Ok(GoldLabel(true)),
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("no") => Ok(GoldLabel(false)),
            _ => Err(format!("label must be yes/no, got {v}")),
        }
    }
}

fn hits(answer: &str, gold: &[GoldAnswer]) -> usize {
    let normalized = normalize(answer);
    gold.iter().filter(|g| g.found_in(&normalized)).count()
}

/// Fraction of gold short answers found in the normalized answer.
pub fn em_recall(answer: &str, gold: &[GoldAnswer]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    hits(answer, gold) as f64 / gold.len() as f64
}

/// The first standalone "yes" or "no" in the answer, ignoring case and
/// surrounding punctuation.
pub fn predicted_label(answer: &str) -> Option<bool> {
    answer.split_whitespace().find_map(|token| {
        let t = token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        match t.as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    })
}

/// 1 when the predicted label matches, 0 otherwise (including no label).
pub fn strategyqa_accuracy(answer: &str, gold: GoldLabel) -> f64 {
    if predicted_label(answer) == Some(gold.0) {
        1.0
    } else {
        0.0
    }
}

/// `min(hits, 5) / 5`: full credit once five gold answers appear.
pub fn recall_5(answer: &str, gold: &[GoldAnswer]) -> f64 {
    hits(answer, gold).min(5) as f64 / 5.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(xs: &[&str]) -> Vec<GoldAnswer> {
        xs.iter().map(|x| GoldAnswer::One(x.to_string())).collect()
    }

    #[test]
    fn em_recall_examples() {
        let answer = "The largest wave occurred in Lituya Bay, Alaska.";
        assert_eq!(em_recall(answer, &one(&["Lituya Bay"])), 1.0);
        assert_eq!(em_recall("x is here", &one(&["x", "y"])), 0.5);
        assert_eq!(em_recall("THE U.S.A.!", &one(&["the usa"])), 1.0);
        assert_eq!(em_recall("anything", &[]), 0.0);
    }

    #[test]
    fn aliases_count_once() {
        let gold = vec![GoldAnswer::Aliases(vec!["NYC".into(), "New York".into()])];
        assert_eq!(em_recall("in new york and nyc", &gold), 1.0);
    }

    #[test]
    fn strategyqa_labels() {
        assert_eq!(predicted_label("Yes, Robert Wadlow could hypothetically"), Some(true));
        assert_eq!(predicted_label("It is not a no-brainer; yes."), Some(true));
        assert_eq!(predicted_label("Maybe."), None);
        assert_eq!(strategyqa_accuracy("Maybe.", GoldLabel(false)), 0.0);
        assert_eq!(strategyqa_accuracy("No.", GoldLabel(false)), 1.0);
    }

    #[test]
    fn gold_label_forms() {
        let l: GoldLabel = serde_json::from_str("\"Yes\"").unwrap();
        assert_eq!(l, GoldLabel(true));
        let l: GoldLabel = serde_json::from_str("false").unwrap();
        assert_eq!(l, GoldLabel(false));
        assert!(serde_json::from_str::<GoldLabel>("\"maybe\"").is_err());
    }

    #[test]
    fn recall_5_caps() {
        let gold = one(&["a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9", "a10"]);
        assert_eq!(recall_5("a1 a2 a3 a4 a5", &gold), 1.0);
        assert_eq!(recall_5("a2 and a3", &gold), 0.4);
        assert_eq!(recall_5("none", &gold), 0.0);
    }
}
