//! Judge and claim decomposer backed by a chat endpoint.

use std::time::Instant;

use super::{Decomposer, JudgeCall, JudgeMode, JudgeProvider};
use crate::providers::{LlmProvider, ProviderError};

pub struct LlmJudge<P> {
    provider: P,
}

impl<P: LlmProvider> LlmJudge<P> {
    pub fn new(provider: P) -> Self {
        Self { provider }
    }

    pub fn prompt(statement: &str, context: &str, mode: JudgeMode) -> String {
        let target = match mode {
            JudgeMode::Factual => "the following statement",
            JudgeMode::Counterfactual => "the negation of the following statement",
        };
        format!(
            "You are an independent fact-checking judge. Using only the database content \
             below, decide whether you can deduce {target} from a set of explicit statements \
             within the database.\n\nDATABASE:\n{context}\n\nSTATEMENT:\n{statement}\n\n\
             Reply with YES or NO on the first line, then a one-sentence justification."
        )
    }
}

/// Reads a leading yes/no; anything else is a malformed reply.
pub fn parse_decision(reply: &str) -> Result<(bool, String), ProviderError> {
    let trimmed = reply.trim_start();
    let word: String = trimmed
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    let decision = match word.as_str() {
        "yes" => true,
        "no" => false,
        _ => {
            return Err(ProviderError::Malformed(format!(
                "judge reply does not start with yes/no: {:?}",
                trimmed.chars().take(40).collect::<String>()
            )))
        }
    };
    let rest = trimmed[word.len()..]
        .trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .trim();
    let justification = if rest.is_empty() {
        "no justification given".to_string()
    } else {
        rest.to_string()
    };
    Ok((decision, justification))
}

impl<P: LlmProvider> JudgeProvider for LlmJudge<P> {
    fn judge(
        &self,
        statement: &str,
        context: &str,
        mode: JudgeMode,
    ) -> Result<JudgeCall, ProviderError> {
        let start = Instant::now();
        let reply = self
            .provider
            .chat(&Self::prompt(statement, context, mode))?;
        let (decision, justification) = parse_decision(&reply)?;
        Ok(JudgeCall {
            decision,
            justification,
            raw: Some(reply),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

pub struct LlmDecomposer<P> {
    provider: P,
}

impl<P: LlmProvider> LlmDecomposer<P> {
    pub fn new(provider: P) -> Self {
        Self { provider }
    }
}

impl<P: LlmProvider> Decomposer for LlmDecomposer<P> {
    fn decompose(&self, sentence: &str) -> Result<Vec<String>, ProviderError> {
        let prompt = format!(
            "Split the sentence below into atomic claims: the smallest propositions that can \
             be verified independently. Write one claim per line and nothing else.\n\n{sentence}"
        );
        let reply = self.provider.chat(&prompt)?;
        let claims: Vec<String> = reply
            .lines()
            .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if claims.is_empty() {
            return Err(ProviderError::Malformed(
                "decomposer returned no claims".into(),
            ));
        }
        Ok(claims)
    }
}
