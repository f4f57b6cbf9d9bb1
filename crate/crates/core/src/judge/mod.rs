//! Database-driven fact checking. Answers are decomposed into statements,
//! each statement is checked twice against a trusted context document
//! (is it deducible? is its negation deducible?) and the pair of decisions
//! maps to one of four categories.

mod context;
mod live;
mod mock;
mod split;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{with_retry, ProviderError, RetryPolicy};

pub use context::{overlap_score, retrieve_context, ContextStore, Retrieved};
pub use live::{LlmDecomposer, LlmJudge};
pub use mock::{MockDecomposer, MockJudge};
pub use split::{
    decompose, normalize_claim, sentence_spans, split_sentences, Decomposition, Granularity,
    Statement, ABBREVIATIONS,
};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("empty context")]
    EmptyContext,
    #[error("context not found for key {0}")]
    ContextNotFound(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("judge provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed context store {path}: {message}")]
    MalformedStore { path: String, message: String },
}

pub type Result<T, E = JudgeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Factual,
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeCall {
    pub decision: bool,
    pub justification: String,
    /// Provider payload as received, if any.
    #[serde(default)]
    pub raw: Option<String>,
    /// Wall time reported by the provider; 0 for mocks.
    #[serde(default)]
    pub latency_ms: f64,
}

/// Decides deducibility of a statement (or of its negation) from a context.
pub trait JudgeProvider: Send + Sync {
    fn judge(
        &self,
        statement: &str,
        context: &str,
        mode: JudgeMode,
    ) -> Result<JudgeCall, ProviderError>;
}

/// Splits one sentence into atomic claims.
pub trait Decomposer: Send + Sync {
    fn decompose(&self, sentence: &str) -> Result<Vec<String>, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Fact,
    Hallucination,
    JudgmentError,
    CoverageGap,
}

impl Category {
    pub fn score(self) -> f64 {
        match self {
            Self::Fact => 1.0,
            Self::Hallucination => 0.0,
            Self::JudgmentError | Self::CoverageGap => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fact => "Fact",
            Self::Hallucination => "Hallucination",
            Self::JudgmentError => "JudgmentError",
            Self::CoverageGap => "CoverageGap",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = JudgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' '], "").as_str() {
            "fact" => Ok(Self::Fact),
            "hallucination" => Ok(Self::Hallucination),
            "judgmenterror" => Ok(Self::JudgmentError),
            "coveragegap" => Ok(Self::CoverageGap),
            _ => Err(JudgeError::InvalidInput(format!("unknown category {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub category: Category,
    pub score: f64,
    pub supported: bool,
    pub contradicted: bool,
}

pub fn categorize(supported: bool, contradicted: bool) -> Verdict {
    let category = match (supported, contradicted) {
        (true, false) => Category::Fact,
        (false, true) => Category::Hallucination,
        (true, true) => Category::JudgmentError,
        (false, false) => Category::CoverageGap,
    };
    Verdict {
        category,
        score: category.score(),
        supported,
        contradicted,
    }
}

fn check(
    statement: &Statement,
    context: &str,
    provider: &dyn JudgeProvider,
    mode: JudgeMode,
    retry: &RetryPolicy,
) -> Result<JudgeCall> {
    if context.trim().is_empty() {
        return Err(JudgeError::EmptyContext);
    }
    Ok(with_retry(retry, |_| {
        provider.judge(&statement.text, context, mode)
    })?)
}

/// Is the statement deducible from the context?
pub fn factual_check(
    statement: &Statement,
    context: &str,
    provider: &dyn JudgeProvider,
    retry: &RetryPolicy,
) -> Result<JudgeCall> {
    check(statement, context, provider, JudgeMode::Factual, retry)
}

/// Is the negation of the statement deducible from the context?
pub fn counterfactual_check(
    statement: &Statement,
    context: &str,
    provider: &dyn JudgeProvider,
    retry: &RetryPolicy,
) -> Result<JudgeCall> {
    check(
        statement,
        context,
        provider,
        JudgeMode::Counterfactual,
        retry,
    )
}

/// Per-statement outcome: one of the four categories, or `Error` when the
/// provider failed for that statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Fact,
    Hallucination,
    JudgmentError,
    CoverageGap,
    Error,
}

impl From<Category> for Outcome {
    fn from(c: Category) -> Self {
        match c {
            Category::Fact => Self::Fact,
            Category::Hallucination => Self::Hallucination,
            Category::JudgmentError => Self::JudgmentError,
            Category::CoverageGap => Self::CoverageGap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementResult {
    pub index: usize,
    pub statement: Statement,
    pub outcome: Outcome,
    pub verdict: Option<Verdict>,
    pub factual: Option<JudgeCall>,
    pub counterfactual: Option<JudgeCall>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerJudgement {
    pub statements: Vec<StatementResult>,
    pub histogram: BTreeMap<Outcome, usize>,
    /// Mean score over statements without an `Error` outcome; `None` when
    /// every statement failed.
    pub mean_score: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub granularity: Granularity,
    pub retry: RetryPolicy,
    /// Upper bound on statements judged at once.
    pub concurrency: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::Sentence,
            retry: RetryPolicy::default(),
            concurrency: 4,
        }
    }
}

fn judge_statement(
    index: usize,
    statement: Statement,
    context: &str,
    provider: &dyn JudgeProvider,
    retry: &RetryPolicy,
) -> StatementResult {
    let calls = factual_check(&statement, context, provider, retry)
        .and_then(|f| counterfactual_check(&statement, context, provider, retry).map(|c| (f, c)));
    match calls {
        Ok((f, c)) => {
            let verdict = categorize(f.decision, c.decision);
            StatementResult {
                index,
                statement,
                outcome: verdict.category.into(),
                verdict: Some(verdict),
                factual: Some(f),
                counterfactual: Some(c),
                error: None,
            }
        }
        Err(e) => StatementResult {
            index,
            statement,
            outcome: Outcome::Error,
            verdict: None,
            factual: None,
            counterfactual: None,
            error: Some(e.to_string()),
        },
    }
}

/// Decomposes `answer` and runs both checks on every statement. Provider
/// failures on single statements become `Error` outcomes; results are in
/// statement order.
pub fn judge_answer(
    answer: &str,
    context: &str,
    provider: &dyn JudgeProvider,
    decomposer: Option<&dyn Decomposer>,
    config: &JudgeConfig,
) -> Result<AnswerJudgement> {
    if context.trim().is_empty() {
        return Err(JudgeError::EmptyContext);
    }
    let Decomposition {
        statements,
        warnings,
    } = decompose(answer, config.granularity, decomposer)?;
    let n = statements.len();
    let workers = config.concurrency.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<StatementResult>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = judge_statement(i, statements[i].clone(), context, provider, &config.retry);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    let results: Vec<StatementResult> = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every statement judged"))
        .collect();
    let mut histogram = BTreeMap::new();
    for r in &results {
        *histogram.entry(r.outcome).or_insert(0) += 1;
    }
    let scored: Vec<f64> = results
        .iter()
        .filter_map(|r| r.verdict.map(|v| v.score))
        .collect();
    let mean_score = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok(AnswerJudgement {
        statements: results,
        histogram,
        mean_score,
        warnings,
    })
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    answer_id: &'a str,
    index: usize,
    statement: &'a str,
    mode: JudgeMode,
    decision: Option<bool>,
    justification: Option<&'a str>,
    latency_ms: Option<f64>,
    error: Option<&'a str>,
}

/// Appends one JSON line per (statement, mode) check.
pub fn write_transcript(
    answer_id: &str,
    judgement: &AnswerJudgement,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    for r in &judgement.statements {
        for (mode, call) in [
            (JudgeMode::Factual, &r.factual),
            (JudgeMode::Counterfactual, &r.counterfactual),
        ] {
            let line = TranscriptLine {
                answer_id,
                index: r.index,
                statement: &r.statement.text,
                mode,
                decision: call.as_ref().map(|c| c.decision),
                justification: call.as_ref().map(|c| c.justification.as_str()),
                latency_ms: call.as_ref().map(|c| c.latency_ms),
                error: r.error.as_deref(),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Percentages of statement outcomes in the four reporting columns.
/// `Error` collects judgment errors and provider failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub n: usize,
    pub factuality: f64,
    pub hallucination: f64,
    pub coverage: f64,
    pub error: f64,
}

pub fn label_distribution<'a>(
    judgements: impl IntoIterator<Item = &'a AnswerJudgement>,
) -> LabelDistribution {
    let mut counts = [0usize; 4];
    for j in judgements {
        for (outcome, c) in &j.histogram {
            let col = match outcome {
                Outcome::Fact => 0,
                Outcome::Hallucination => 1,
                Outcome::CoverageGap => 2,
                Outcome::JudgmentError | Outcome::Error => 3,
            };
            counts[col] += c;
        }
    }
    let n: usize = counts.iter().sum();
    let pct = |c: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * c as f64 / n as f64
        }
    };
    LabelDistribution {
        n,
        factuality: pct(counts[0]),
        hallucination: pct(counts[1]),
        coverage: pct(counts[2]),
        error: pct(counts[3]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_table() {
        let cases = [
            (true, false, Category::Fact, 1.0),
            (false, true, Category::Hallucination, 0.0),
            (true, true, Category::JudgmentError, 0.5),
            (false, false, Category::CoverageGap, 0.5),
        ];
        for (s, c, cat, score) in cases {
            let v = categorize(s, c);
            assert_eq!(v.category, cat);
            assert_eq!(v.score, score);
            assert_eq!((v.supported, v.contradicted), (s, c));
        }
    }

    #[test]
    fn category_parsing() {
        assert_eq!(
            "coverage_gap".parse::<Category>().unwrap(),
            Category::CoverageGap
        );
        assert_eq!("Fact".parse::<Category>().unwrap(), Category::Fact);
        assert!("maybe".parse::<Category>().is_err());
    }
}
