//! Client contracts for external LLM endpoints: chat sampling, single-token
//! classification with top-k log-probabilities, and forced-inference traces
//! over a supplied continuation. One HTTP dialect (OpenAI-compatible) plus
//! scripted mocks.

mod mock;
mod openai;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{sort_candidates, ModelTrace, TokenStep, TopCandidate, TraceError};

pub use mock::{mock_tokenize, MockProvider};
pub use openai::{OpenAiClient, TranscriptLog};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("failed after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<ProviderError>,
    },
    #[error("logprobs not returned")]
    MissingLogprobs,
    #[error("empty continuation")]
    EmptyContinuation,
    #[error("endpoint lacks capability: {0}")]
    Unsupported(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trace from provider: {0}")]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Other(String),
}

impl ProviderError {
    /// Transient failures worth another attempt.
    pub fn is_retriable(&self) -> bool {
        match self {
            Self::Timeout | Self::Transport(_) => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Attempt count for exhausted retries, 1 otherwise.
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Exhausted { attempts, .. } => *attempts,
            _ => 1,
        }
    }
}

pub type Result<T, E = ProviderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub retries: u32,
    /// Base delay; doubles after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff_ms: 250,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        Self {
            retries,
            backoff_ms: 0,
        }
    }
}

/// Runs `call` up to `retries + 1` times, retrying only retriable errors.
/// The closure receives the 1-based attempt number.
pub fn with_retry<T>(policy: &RetryPolicy, mut call: impl FnMut(u32) -> Result<T>) -> Result<T> {
    let max = policy.retries + 1;
    let mut attempt = 1;
    loop {
        match call(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if !e.is_retriable() => return Err(e),
            Err(e) if attempt >= max => {
                return Err(ProviderError::Exhausted {
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => {
                tracing::debug!(attempt, error = %e, "retrying provider call");
                if policy.backoff_ms > 0 {
                    let factor = 1u64 << (attempt - 1).min(16);
                    std::thread::sleep(Duration::from_millis(policy.backoff_ms * factor));
                }
                attempt += 1;
            }
        }
    }
}

/// Endpoint settings. The credential is referenced by environment variable
/// name and read at client construction; its value is never stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    #[serde(flatten)]
    pub retry: RetryPolicy,
    pub top_logprobs: usize,
    pub max_concurrent: usize,
    /// Surface forms of the affirmative and negative answers for
    /// single-token classification.
    pub yes_token: String,
    pub no_token: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            api_key_env: None,
            model: "default".into(),
            timeout_secs: 60.0,
            retry: RetryPolicy::default(),
            top_logprobs: 20,
            max_concurrent: 4,
            yes_token: "yes".into(),
            no_token: "no".into(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProviderError::InvalidConfig(m));
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout must be > 0, got {}", self.timeout_secs));
        }
        if !(1..=50).contains(&self.top_logprobs) {
            return bad(format!(
                "top_logprobs must be in [1, 50], got {}",
                self.top_logprobs
            ));
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be ≥ 1".into());
        }
        if self.endpoint.is_empty() || self.model.is_empty() {
            return bad("endpoint and model are required".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Result of probing an endpoint. `None` means not probed yet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub top_logprobs: Option<bool>,
    pub continuation_scoring: Option<bool>,
}

/// One attempt per call; retries are layered on by the free functions.
pub trait LlmProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn top_k(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    fn chat(&self, prompt: &str) -> Result<String>;
    /// First generated step with its top-k candidates.
    fn first_step(&self, prompt: &str) -> Result<TokenStep>;
    /// Per-token distributions of `continuation` conditioned on `prompt`.
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<Vec<TokenStep>>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn top_k(&self) -> usize {
        (**self).top_k()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn chat(&self, prompt: &str) -> Result<String> {
        (**self).chat(prompt)
    }

    fn first_step(&self, prompt: &str) -> Result<TokenStep> {
        (**self).first_step(prompt)
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<Vec<TokenStep>> {
        (**self).score_continuation(prompt, continuation)
    }
}

/// Stable 64-bit id of a token surface form (FNV-1a).
pub fn token_id(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Builds a step from surface-form candidates as returned by an endpoint:
/// duplicate ids keep their best log-probability, the list is truncated to
/// `k`, candidate mass above 1 is renormalized, and the generated token
/// takes its candidate entry when listed.
pub fn step_from_surface(
    generated: &str,
    generated_logprob: f64,
    top: &[(String, f64)],
    k: usize,
) -> Result<TokenStep> {
    let mut cands: Vec<TopCandidate> = Vec::with_capacity(top.len());
    for (tok, lp) in top {
        let id = token_id(tok);
        let lp = lp.min(0.0);
        match cands.iter_mut().find(|c| c.token_id == id) {
            Some(c) => c.logprob = c.logprob.max(lp),
            None => cands.push(TopCandidate::new(id, lp)),
        }
    }
    sort_candidates(&mut cands);
    cands.truncate(k);
    if cands.is_empty() {
        return Err(ProviderError::MissingLogprobs);
    }
    // rounded endpoint values can sum past 1
    let mass: f64 = cands.iter().map(TopCandidate::prob).sum();
    if mass > 1.0 {
        let shift = mass.ln();
        cands.iter_mut().for_each(|c| c.logprob -= shift);
    }
    let gen_id = token_id(generated);
    let lp = cands
        .iter()
        .find(|c| c.token_id == gen_id)
        .map_or(generated_logprob.min(0.0), |c| c.logprob);
    Ok(TokenStep::from_candidates(gen_id, lp, cands, k)?)
}

pub fn chat_generate(
    provider: &dyn LlmProvider,
    prompt: &str,
    n_samples: usize,
    retry: &RetryPolicy,
) -> Result<Vec<String>> {
    if n_samples == 0 {
        return Err(ProviderError::InvalidConfig("n_samples must be ≥ 1".into()));
    }
    (0..n_samples)
        .map(|_| with_retry(retry, |_| provider.chat(prompt)))
        .collect()
}

pub fn classification_prompt(question: &str, text: &str) -> String {
    format!(
        "Question: {question}\n\nText: {text}\n\nDoes the text contain a hallucination? \
         Answer with a single word, yes or no."
    )
}

pub fn single_token_classify(
    provider: &dyn LlmProvider,
    question: &str,
    text: &str,
    retry: &RetryPolicy,
) -> Result<TokenStep> {
    let prompt = classification_prompt(question, text);
    with_retry(retry, |_| provider.first_step(&prompt))
}

/// Classifies `text` once per question rephrasing, keyed by variant id.
pub fn classify_variants(
    provider: &dyn LlmProvider,
    variants: &[(String, String)],
    text: &str,
    retry: &RetryPolicy,
) -> Result<Vec<(String, TokenStep)>> {
    variants
        .iter()
        .map(|(variant_id, question)| {
            single_token_classify(provider, question, text, retry).map(|s| (variant_id.clone(), s))
        })
        .collect()
}

/// Maps a classification step to its decision: `Some(true)` for the
/// affirmative form, `Some(false)` for the negative one.
pub fn classify_decision(step: &TokenStep, yes_token: &str, no_token: &str) -> Option<bool> {
    let id = step.generated_token_id();
    if id == token_id(yes_token) {
        Some(true)
    } else if id == token_id(no_token) {
        Some(false)
    } else {
        None
    }
}

pub fn forced_inference_trace(
    provider: &dyn LlmProvider,
    prompt: &str,
    answer: &str,
    retry: &RetryPolicy,
) -> Result<ModelTrace> {
    if answer.trim().is_empty() {
        return Err(ProviderError::EmptyContinuation);
    }
    if provider.capabilities().continuation_scoring == Some(false) {
        return Err(ProviderError::Unsupported("continuation scoring".into()));
    }
    let steps = with_retry(retry, |_| provider.score_continuation(prompt, answer))?;
    if steps.is_empty() {
        return Err(ProviderError::EmptyContinuation);
    }
    Ok(ModelTrace::new(
        provider.model_id(),
        provider.top_k(),
        steps,
    )?)
}
