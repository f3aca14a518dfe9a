use serde::{Deserialize, Serialize};

use super::PredictionRecord;
use crate::backends::estimate_tokens;

/// Average tokens per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub llm_tokens: f64,
    pub nli_tokens: f64,
    /// Some generator counts were estimated from character length.
    pub llm_estimated: bool,
    pub nli_estimated: bool,
}

/// Token counts for one record, each with an "estimated" flag. Records without
/// generator usage fall back to an estimate from the answer text; records
/// without entailment usage count zero.
pub(crate) fn record_tokens(record: &PredictionRecord) -> ((u64, bool), (u64, bool)) {
    let llm = match &record.usage {
        Some(u) => (u.total(), u.estimated),
        None => (estimate_tokens(&record.answer), true),
    };
    let nli = match &record.nli_usage {
        Some(u) => (u.total(), u.estimated),
        None => (0, false),
    };
    (llm, nli)
}

pub fn token_cost(records: &[PredictionRecord]) -> CostSummary {
    if records.is_empty() {
        return CostSummary::default();
    }
    let mut summary = CostSummary::default();
    for r in records {
        let ((llm, llm_est), (nli, nli_est)) = record_tokens(r);
        summary.llm_tokens += llm as f64;
        summary.nli_tokens += nli as f64;
        summary.llm_estimated |= llm_est;
        summary.nli_estimated |= nli_est;
    }
    summary.llm_tokens /= records.len() as f64;
    summary.nli_tokens /= records.len() as f64;
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Usage;

    fn rec(usage: Option<Usage>, nli: Option<Usage>) -> PredictionRecord {
        PredictionRecord {
            query_id: "q".into(),
            answer: "abcdefgh".into(),
            usage,
            nli_usage: nli,
            ..Default::default()
        }
    }

    #[test]
    fn sums_reported_usage() {
        let u = |p, c| Some(Usage { prompt_tokens: p, completion_tokens: c, estimated: false });
        let s = token_cost(&[rec(u(100, 20), None), rec(u(50, 10), u(7, 0))]);
        assert_eq!(s.llm_tokens, 90.0);
        assert_eq!(s.nli_tokens, 3.5);
        assert!(!s.llm_estimated);
    }

    #[test]
    fn estimates_when_missing() {
        let s = token_cost(&[rec(None, None)]);
        assert_eq!(s.llm_tokens, 2.0);
        assert!(s.llm_estimated);
        assert_eq!(s.nli_tokens, 0.0);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(token_cost(&[]), CostSummary::default());
    }
}
