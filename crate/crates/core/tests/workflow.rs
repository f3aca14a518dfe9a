use groundcite::backends::{OracleScorer, ScriptedGenerator};
use groundcite::eval::{evaluate, DatasetStyle, GoldAnswer, GoldRecord, PredictionRecord};
use groundcite::retrieval::{Bm25Index, Bm25Params, Corpus, Passage, Retriever};
use groundcite::tta::{run_tta, TtaParams};

fn corpus() -> Corpus {
    Corpus::from_passages(vec![
        Passage::new("rogue", "Rogue wave", "Where did the largest rogue wave occur? In the North Sea."),
        Passage::new("bay", "Lituya Bay", "The largest wave ever recorded hit Lituya Bay."),
        Passage::new("fruit", "Bananas", "Bananas are yellow."),
        Passage::new("city", "Paris", "Paris is the capital of France."),
    ])
    .unwrap()
}

#[test]
fn saved_index_answers_like_the_original() {
    let index = Bm25Index::build(&corpus(), Bm25Params::default());
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path().join("idx"), false).unwrap();
    assert!(index.save(dir.path().join("idx"), false).is_err());
    let loaded = Bm25Index::load(dir.path().join("idx")).unwrap();
    for q in ["largest wave", "bananas", "capital of france", "nothing matches"] {
        assert_eq!(index.retrieve(q, 4).unwrap(), loaded.retrieve(q, 4).unwrap(), "{q}");
    }
}

#[test]
fn inferred_answer_scores_through_evaluation() {
    let index = Bm25Index::build(&corpus(), Bm25Params::default());
    let model = ScriptedGenerator::new([
        "Answer:\nThe largest wave hit Lituya Bay.\n\nSentences Not Supported by Citations:\nThe largest wave hit Lituya Bay.",
        "Answer:\nThe largest wave ever recorded hit Lituya Bay [1].\n\nSentences Not Supported by Citations:\nNone.",
    ]);
    let params = TtaParams {
        k: 1,
        ..TtaParams::default()
    };
    let r = run_tta("where did the largest wave occur?", &index, &model, &params).unwrap();
    assert_eq!(r.cited_passages, ["bay"]);

    let pred = PredictionRecord {
        query_id: "q1".into(),
        answer: r.answer.statements.join(" "),
        statements: Some(r.answer.statements.clone()),
        citations: Some(r.answer.citations.clone()),
        usage: Some(r.trace.usage),
        ..Default::default()
    };
    let gold = GoldRecord {
        query_id: "q1".into(),
        short_answers: Some(vec![GoldAnswer::One("Lituya Bay".into())]),
        ..Default::default()
    };
    let report = evaluate(&[pred], &[gold], DatasetStyle::Nq, index.corpus(), &OracleScorer::new(), 0.5);
    assert!(!report.has_mismatches());
    assert_eq!(report.citation_recall, 1.0);
    assert_eq!(report.citation_precision, 1.0);
    assert_eq!(report.correctness.unwrap().value, 1.0);
    assert!(report.cost.llm_tokens > 0.0);
}
