use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};

use super::{Decomposer, JudgeCall, JudgeMode, JudgeProvider};
use crate::providers::ProviderError;

/// Deterministic judge over registered statement sets. A statement is
/// supported when it is in the fact set; it is contradicted when its
/// registered negation is in the fact set. The context is ignored.
#[derive(Debug, Default)]
pub struct MockJudge {
    facts: BTreeSet<String>,
    negations: BTreeMap<String, String>,
    failing: BTreeSet<String>,
    transient_failures: u32,
    calls: AtomicU32,
}

impl MockJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_facts<I, S>(mut self, facts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.facts
            .extend(facts.into_iter().map(|s| s.into().trim().to_string()));
        self
    }

    pub fn with_negation(mut self, statement: &str, negation: &str) -> Self {
        self.negations
            .insert(statement.trim().to_string(), negation.trim().to_string());
        self
    }

    /// Every call on `statement` fails with a transport error.
    pub fn failing_on(mut self, statement: &str) -> Self {
        self.failing.insert(statement.trim().to_string());
        self
    }

    /// The first `n` calls fail with a transport error.
    pub fn with_transient_failures(mut self, n: u32) -> Self {
        self.transient_failures = n;
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl JudgeProvider for MockJudge {
    fn judge(
        &self,
        statement: &str,
        _context: &str,
        mode: JudgeMode,
    ) -> Result<JudgeCall, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let key = statement.trim();
        if n <= self.transient_failures || self.failing.contains(key) {
            return Err(ProviderError::Transport("injected judge failure".into()));
        }
        let (decision, justification) = match mode {
            JudgeMode::Factual => {
                let d = self.facts.contains(key);
                (
                    d,
                    if d {
                        "registered fact"
                    } else {
                        "not registered"
                    },
                )
            }
            JudgeMode::Counterfactual => {
                let d = self
                    .negations
                    .get(key)
                    .is_some_and(|neg| self.facts.contains(neg));
                (
                    d,
                    if d {
                        "registered negation"
                    } else {
                        "no registered negation"
                    },
                )
            }
        };
        Ok(JudgeCall {
            decision,
            justification: justification.to_string(),
            raw: None,
            latency_ms: 0.0,
        })
    }
}

/// Returns scripted claims per sentence, or `per_sentence` numbered echoes
/// of the sentence when none is scripted.
#[derive(Debug, Default)]
pub struct MockDecomposer {
    scripted: BTreeMap<String, Vec<String>>,
    per_sentence: usize,
    fail: bool,
}

impl MockDecomposer {
    pub fn echo(per_sentence: usize) -> Self {
        Self {
            per_sentence,
            ..Self::default()
        }
    }

    pub fn failing() -> Self {
        Self {
            fail: true,
            ..Self::default()
        }
    }

    pub fn with_claims(mut self, sentence: &str, claims: Vec<String>) -> Self {
        self.scripted.insert(sentence.to_string(), claims);
        self
    }
}

impl Decomposer for MockDecomposer {
    fn decompose(&self, sentence: &str) -> Result<Vec<String>, ProviderError> {
        if self.fail {
            return Err(ProviderError::Other("decomposer unavailable".into()));
        }
        if let Some(c) = self.scripted.get(sentence) {
            return Ok(c.clone());
        }
        Ok((1..=self.per_sentence)
            .map(|i| format!("{sentence} [claim {i}]"))
            .collect())
    }
}
