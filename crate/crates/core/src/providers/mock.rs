//! Scripted, deterministic provider for tests and offline runs.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use super::{step_from_surface, Capabilities, LlmProvider, ProviderError, Result};
use crate::trace::TokenStep;

/// Whitespace tokenizer used by the mock forced-inference engine.
pub fn mock_tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug)]
pub struct MockProvider {
    model_id: String,
    k: usize,
    chat_script: Vec<String>,
    classify_script: Vec<Vec<(String, f64)>>,
    forced_script: Option<Vec<TokenStep>>,
    transient_failures: u32,
    always_timeout: bool,
    omit_logprobs: bool,
    caps: Capabilities,
    calls: AtomicU32,
    chat_cursor: AtomicUsize,
    classify_cursor: AtomicUsize,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>, k: usize) -> Self {
        Self {
            model_id: model_id.into(),
            k,
            chat_script: Vec::new(),
            classify_script: Vec::new(),
            forced_script: None,
            transient_failures: 0,
            always_timeout: false,
            omit_logprobs: false,
            caps: Capabilities {
                top_logprobs: Some(true),
                continuation_scoring: Some(true),
            },
            calls: AtomicU32::new(0),
            chat_cursor: AtomicUsize::new(0),
            classify_cursor: AtomicUsize::new(0),
        }
    }

    /// Chat answers, returned in order and cycled.
    pub fn with_chat_script(mut self, answers: Vec<String>) -> Self {
        self.chat_script = answers;
        self
    }

    /// Candidate lists for successive classification calls, cycled. The
    /// highest-probability candidate is the generated token.
    pub fn with_classify_script(mut self, steps: Vec<Vec<(String, f64)>>) -> Self {
        self.classify_script = steps;
        self
    }

    /// Steps returned verbatim by continuation scoring; the count must equal
    /// the mock token count of the continuation.
    pub fn with_forced_script(mut self, steps: Vec<TokenStep>) -> Self {
        self.forced_script = Some(steps);
        self
    }

    /// The first `n` calls fail with a transport error.
    pub fn with_transient_failures(mut self, n: u32) -> Self {
        self.transient_failures = n;
        self
    }

    pub fn timing_out(mut self) -> Self {
        self.always_timeout = true;
        self
    }

    pub fn without_logprobs(mut self) -> Self {
        self.omit_logprobs = true;
        self
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.caps = caps;
        self
    }

    /// Total calls made, failed ones included.
    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    fn enter(&self) -> Result<()> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if self.always_timeout {
            return Err(ProviderError::Timeout);
        }
        if n <= self.transient_failures {
            return Err(ProviderError::Transport(format!("injected failure {n}")));
        }
        Ok(())
    }
}

impl LlmProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn top_k(&self) -> usize {
        self.k
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn chat(&self, _prompt: &str) -> Result<String> {
        self.enter()?;
        if self.chat_script.is_empty() {
            return Err(ProviderError::Other("mock has no scripted answers".into()));
        }
        let i = self.chat_cursor.fetch_add(1, Ordering::SeqCst);
        Ok(self.chat_script[i % self.chat_script.len()].clone())
    }

    fn first_step(&self, _prompt: &str) -> Result<TokenStep> {
        self.enter()?;
        if self.omit_logprobs || self.classify_script.is_empty() {
            return Err(ProviderError::MissingLogprobs);
        }
        let i = self.classify_cursor.fetch_add(1, Ordering::SeqCst);
        let top = &self.classify_script[i % self.classify_script.len()];
        let (tok, lp) = top
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .ok_or(ProviderError::MissingLogprobs)?;
        step_from_surface(tok, *lp, top, self.k)
    }

    fn score_continuation(&self, _prompt: &str, continuation: &str) -> Result<Vec<TokenStep>> {
        self.enter()?;
        if self.caps.continuation_scoring == Some(false) {
            return Err(ProviderError::Unsupported("continuation scoring".into()));
        }
        if self.omit_logprobs {
            return Err(ProviderError::MissingLogprobs);
        }
        let tokens = mock_tokenize(continuation);
        if tokens.is_empty() {
            return Err(ProviderError::EmptyContinuation);
        }
        if let Some(script) = &self.forced_script {
            if script.len() != tokens.len() {
                return Err(ProviderError::Malformed(format!(
                    "script has {} steps for {} tokens",
                    script.len(),
                    tokens.len()
                )));
            }
            return Ok(script.clone());
        }
        tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let top = vec![
                    (tok.to_string(), 0.8f64.ln()),
                    (format!("<alt{}>", i % 7), 0.1f64.ln()),
                    ("<unk>".to_string(), 0.05f64.ln()),
                ];
                step_from_surface(tok, 0.8f64.ln(), &top, self.k)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{
        chat_generate, classify_decision, forced_inference_trace, single_token_classify, token_id,
        RetryPolicy,
    };
    use super::*;

    fn no_top20() -> Vec<(String, f64)> {
        let mut top = vec![("no".to_string(), -0.05), ("yes".to_string(), -3.2)];
        for i in 0..18 {
            top.push((format!("t{i}"), -8.0 - i as f64 * 0.1));
        }
        top
    }

    #[test]
    fn classify_scripted_no() {
        let p = MockProvider::new("m", 20).with_classify_script(vec![no_top20()]);
        let step = single_token_classify(&p, "Q?", "text", &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(step.rank(), 1);
        assert_eq!(step.generated_token_id(), token_id("no"));
        assert_eq!(step.top().len(), 20);
        assert_eq!(classify_decision(&step, "yes", "no"), Some(false));
    }

    #[test]
    fn missing_logprobs_is_explicit() {
        let p = MockProvider::new("m", 20).without_logprobs();
        let err = single_token_classify(&p, "Q?", "t", &RetryPolicy::immediate(3)).unwrap_err();
        assert_eq!(err.to_string(), "logprobs not returned");
        assert_eq!(p.calls(), 1);
    }

    #[test]
    fn chat_script_in_order() {
        let answers: Vec<String> = (0..12).map(|i| format!("answer {i}")).collect();
        let p = MockProvider::new("m", 5).with_chat_script(answers.clone());
        let got = chat_generate(&p, "q", 12, &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(got, answers);
        let one = MockProvider::new("m", 5).with_chat_script(answers.clone());
        assert_eq!(
            chat_generate(&one, "q", 1, &RetryPolicy::immediate(0)).unwrap(),
            vec!["answer 0"]
        );
    }

    #[test]
    fn timeout_reports_attempts() {
        let p = MockProvider::new("m", 5).timing_out();
        let err = chat_generate(&p, "q", 1, &RetryPolicy::immediate(3)).unwrap_err();
        assert_eq!(err.attempts(), 4);
        assert_eq!(p.calls(), 4);
    }

    #[test]
    fn forced_trace_length_follows_tokenizer() {
        let p = MockProvider::new("m", 5);
        let answer = "The trial enrolled  120 patients.";
        let t = forced_inference_trace(&p, "prompt", answer, &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.k(), 5);
    }

    #[test]
    fn forced_trace_returns_script() {
        let base = MockProvider::new("m", 3);
        let script = base.score_continuation("", "a b").unwrap();
        let p = MockProvider::new("m", 3).with_forced_script(script.clone());
        let t = forced_inference_trace(&p, "p", "x y", &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(t.steps(), script.as_slice());
    }

    #[test]
    fn empty_and_unsupported_continuations() {
        let p = MockProvider::new("m", 3);
        let err = forced_inference_trace(&p, "p", "  ", &RetryPolicy::immediate(0)).unwrap_err();
        assert_eq!(err.to_string(), "empty continuation");
        let p = MockProvider::new("m", 3).with_capabilities(Capabilities {
            top_logprobs: Some(true),
            continuation_scoring: Some(false),
        });
        let err = forced_inference_trace(&p, "p", "x", &RetryPolicy::immediate(0)).unwrap_err();
        assert!(matches!(err, ProviderError::Unsupported(_)));
    }
}
