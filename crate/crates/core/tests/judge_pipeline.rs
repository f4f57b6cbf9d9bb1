use halluguard::judge::{
    categorize, decompose, judge_answer, label_distribution, split_sentences, AnswerJudgement,
    Category, Granularity, JudgeConfig, MockDecomposer, MockJudge, Outcome,
};
use halluguard::providers::RetryPolicy;
use proptest::prelude::*;

const CONTEXT: &str = "NCT00003468 enrolled 42 participants. The response rate was 31%.";

fn config(granularity: Granularity, concurrency: usize) -> JudgeConfig {
    JudgeConfig {
        granularity,
        retry: RetryPolicy::immediate(1),
        concurrency,
    }
}

fn judge() -> MockJudge {
    MockJudge::new()
        .with_facts([
            "The trial enrolled 42 participants.",
            "The response rate was 31%.",
            "The database says yes.",
            "The database says no.",
        ])
        .with_negation(
            "The trial enrolled 50 participants.",
            "The trial enrolled 42 participants.",
        )
        .with_negation("The database says yes.", "The database says no.")
        .failing_on("This statement always fails.")
}

#[test]
fn four_way_algebra() {
    let cases = [
        ((true, false), Category::Fact, 1.0),
        ((false, true), Category::Hallucination, 0.0),
        ((true, true), Category::JudgmentError, 0.5),
        ((false, false), Category::CoverageGap, 0.5),
    ];
    for ((s, c), cat, score) in cases {
        let v = categorize(s, c);
        assert_eq!((v.category, v.score), (cat, score));
        assert_eq!(cat.score(), score);
    }
}

#[test]
fn distribution_table_by_source() {
    // Two groups of answers, judged sentence by sentence.
    let groups: [(&str, &[&str]); 2] = [
        (
            "summaries",
            &[
                "The trial enrolled 42 participants. The response rate was 31%.",
                "The trial enrolled 50 participants. The response rate was 31%.",
            ],
        ),
        (
            "questions",
            &[
                "The database says yes. The sponsor was a university.",
                "The response rate was 31%. This statement always fails.",
            ],
        ),
    ];
    let j = judge();
    let cfg = config(Granularity::Sentence, 3);
    let mut rows = Vec::new();
    for (name, answers) in groups {
        let judged: Vec<AnswerJudgement> = answers
            .iter()
            .map(|a| judge_answer(a, CONTEXT, &j, None, &cfg).unwrap())
            .collect();
        rows.push((name, label_distribution(&judged)));
    }
    let (_, s) = rows[0];
    assert_eq!(s.n, 4);
    assert_eq!(
        (s.factuality, s.hallucination, s.coverage, s.error),
        (75.0, 25.0, 0.0, 0.0)
    );
    let (_, q) = rows[1];
    assert_eq!(q.n, 4);
    // judgment error + provider failure share the error column
    assert_eq!(
        (q.factuality, q.hallucination, q.coverage, q.error),
        (25.0, 0.0, 25.0, 50.0)
    );
    for (_, d) in rows {
        let total = d.factuality + d.hallucination + d.coverage + d.error;
        assert!((total - 100.0).abs() < 1e-9);
    }
}

#[test]
fn results_keep_statement_order_under_concurrency() {
    let answer: String = (0..40)
        .map(|i| {
            if i % 3 == 0 {
                "The response rate was 31%. ".to_string()
            } else {
                format!("Claim number {i} is unverified. ")
            }
        })
        .collect();
    let j = judge();
    let serial = judge_answer(
        &answer,
        CONTEXT,
        &j,
        None,
        &config(Granularity::Sentence, 1),
    )
    .unwrap();
    let parallel = judge_answer(
        &answer,
        CONTEXT,
        &j,
        None,
        &config(Granularity::Sentence, 8),
    )
    .unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.statements.len(), 40);
    for (i, s) in serial.statements.iter().enumerate() {
        assert_eq!(s.index, i);
        let expected = if i % 3 == 0 {
            Outcome::Fact
        } else {
            Outcome::CoverageGap
        };
        assert_eq!(s.outcome, expected, "{}", s.statement.text);
    }
    assert_eq!(serial.histogram[&Outcome::Fact], 14);
}

#[test]
fn transient_failures_are_retried() {
    let j = judge().with_transient_failures(1);
    let r = judge_answer(
        "The response rate was 31%.",
        CONTEXT,
        &j,
        None,
        &config(Granularity::Sentence, 1),
    )
    .unwrap();
    assert_eq!(r.statements[0].outcome, Outcome::Fact);
    assert_eq!(j.calls(), 3);
}

#[test]
fn empty_context_is_rejected() {
    let err = judge_answer(
        "Anything.",
        "  ",
        &judge(),
        None,
        &config(Granularity::Sentence, 1),
    )
    .unwrap_err();
    assert_eq!(err.to_string(), "empty context");
}

#[test]
fn atomic_claims_fall_back_to_sentences() {
    let text = "Dr. Smith led the trial. It enrolled 42 participants.";
    let d = decompose(text, Granularity::AtomicClaim, None).unwrap();
    assert_eq!(d.statements.len(), 2);
    assert_eq!(d.warnings.len(), 1);
    let failing = MockDecomposer::failing();
    let d = decompose(text, Granularity::AtomicClaim, Some(&failing)).unwrap();
    assert_eq!(d.statements.len(), 2);
    assert!(!d.warnings.is_empty());
    let echo = MockDecomposer::echo(2);
    let d = decompose(text, Granularity::AtomicClaim, Some(&echo)).unwrap();
    assert_eq!(d.statements.len(), 4);
    assert!(d
        .statements
        .iter()
        .all(|s| s.granularity == Granularity::AtomicClaim));
    let p = decompose(text, Granularity::Paragraph, None).unwrap();
    assert_eq!(p.statements.len(), 1);
    assert_eq!(p.statements[0].text, text);
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,9}",
        "[0-9]{1,3}\\.[0-9]{1,2}",
        Just("Dr. Lee".to_string()),
        Just("e.g. this".to_string()),
        Just("J. Smith".to_string()),
        Just("(n = 42)".to_string()),
    ]
}

fn sentence() -> impl Strategy<Value = String> {
    (
        "[A-Z][a-z]{0,8}",
        prop::collection::vec(word(), 0..8),
        prop_oneof![Just("."), Just("!"), Just("?"), Just(".\""), Just("?)")],
    )
        .prop_map(|(head, words, end)| {
            let mut s = head;
            for w in words {
                s.push(' ');
                s.push_str(&w);
            }
            // end on a plain word so the terminal is never guarded
            s.push_str(" end");
            s.push_str(end);
            s
        })
}

proptest! {
    #[test]
    fn splitter_recovers_joined_sentences(
        sentences in prop::collection::vec(sentence(), 1..8),
        sep in prop_oneof![Just(" "), Just("  "), Just("\n"), Just(" \n\t")],
    ) {
        let text = format!("  {}  ", sentences.join(sep));
        let got = split_sentences(&text);
        let texts: Vec<&str> = got.iter().map(|s| s.text.as_str()).collect();
        prop_assert_eq!(&texts, &sentences.iter().map(String::as_str).collect::<Vec<_>>());
        for s in &got {
            prop_assert_eq!(&text[s.span.0..s.span.1], s.text.as_str());
        }
    }
}
