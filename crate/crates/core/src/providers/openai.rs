//! Blocking client for OpenAI-compatible `chat/completions` and
//! `completions` endpoints.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{step_from_surface, Capabilities, LlmProvider, ProviderConfig, ProviderError, Result};
use crate::trace::TokenStep;

struct Secret(String);

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("<redacted>")
    }
}

/// Counting gate bounding in-flight requests per client.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Line-delimited JSON log of requests and responses. Headers are never
/// written, so credentials cannot leak into it.
pub struct TranscriptLog {
    file: Mutex<File>,
}

impl std::fmt::Debug for TranscriptLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TranscriptLog")
    }
}

impl TranscriptLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    fn record(&self, entry: &Value) {
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(f, "{entry}") {
            tracing::warn!(error = %e, "transcript write failed");
        }
    }
}

#[derive(Debug)]
pub struct OpenAiClient {
    config: ProviderConfig,
    http: reqwest::blocking::Client,
    auth: Option<Secret>,
    caps: Mutex<Capabilities>,
    gate: Gate,
    transcript: Option<Arc<TranscriptLog>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<ChatTokenLogprob>>,
}

#[derive(Deserialize)]
struct ChatTokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<ChatTop>,
}

#[derive(Deserialize)]
struct ChatTop {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    logprobs: Option<CompletionLogprobs>,
}

#[derive(Deserialize)]
struct CompletionLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<Map<String, Value>>>>,
    text_offset: Vec<usize>,
}

impl OpenAiClient {
    /// Validates the config and resolves the credential variable, if any.
    pub fn new(config: ProviderConfig, transcript: Option<Arc<TranscriptLog>>) -> Result<Self> {
        config.validate()?;
        let auth = match &config.api_key_env {
            Some(var) => {
                Some(Secret(std::env::var(var).map_err(|_| {
                    ProviderError::MissingCredential(var.clone())
                })?))
            }
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            gate: Gate::new(config.max_concurrent),
            config,
            http,
            auth,
            caps: Mutex::new(Capabilities::default()),
            transcript,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.config.endpoint.trim_end_matches('/'))
    }

    fn post(&self, route: &str, body: Value) -> Result<Value> {
        let _permit = self.gate.acquire();
        let start = Instant::now();
        let mut req = self.http.post(self.url(route)).json(&body);
        if let Some(Secret(key)) = &self.auth {
            req = req.bearer_auth(key);
        }
        let result = send(req);
        if let Some(log) = &self.transcript {
            let mut entry = json!({
                "timestamp": chrono::Utc::now().to_rfc3339(),
                "model": self.config.model,
                "route": route,
                "latency_ms": start.elapsed().as_secs_f64() * 1e3,
                "request": body,
            });
            match &result {
                Ok(v) => entry["response"] = v.clone(),
                Err(e) => entry["error"] = Value::String(e.to_string()),
            }
            log.record(&entry);
        }
        result
    }

    /// Checks whether the endpoint returns top-k log-probabilities and
    /// scores supplied continuations. Transport failures propagate.
    pub fn probe(&self) -> Result<Capabilities> {
        let top = match self.first_step("Reply with the single word yes.") {
            Ok(_) => Some(true),
            Err(ProviderError::MissingLogprobs) => Some(false),
            Err(e) => return Err(e),
        };
        let cont = match self.score_continuation("The sky is", " blue.") {
            Ok(_) => Some(true),
            Err(e) if e.is_retriable() => return Err(e),
            Err(_) => Some(false),
        };
        let caps = Capabilities {
            top_logprobs: top,
            continuation_scoring: cont,
        };
        *self.caps.lock().unwrap_or_else(|e| e.into_inner()) = caps;
        Ok(caps)
    }

    fn chat_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

fn send(req: reqwest::blocking::RequestBuilder) -> Result<Value> {
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout
        } else {
            ProviderError::Transport(e.without_url().to_string())
        }
    })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout
        } else {
            ProviderError::Transport(e.without_url().to_string())
        }
    })?;
    if !status.is_success() {
        let mut body = text;
        body.truncate(512);
        return Err(ProviderError::Http {
            status: status.as_u16(),
            body,
        });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| ProviderError::Malformed(e.to_string()))
}

impl LlmProvider for OpenAiClient {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn top_k(&self) -> usize {
        self.config.top_logprobs
    }

    fn capabilities(&self) -> Capabilities {
        *self.caps.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn chat(&self, prompt: &str) -> Result<String> {
        let resp: ChatResponse = decode(self.post("chat/completions", self.chat_body(prompt))?)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Malformed("no message content".into()))
    }

    fn first_step(&self, prompt: &str) -> Result<TokenStep> {
        let mut body = self.chat_body(prompt);
        body["max_tokens"] = json!(1);
        body["temperature"] = json!(0);
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(self.config.top_logprobs);
        let resp: ChatResponse = decode(self.post("chat/completions", body)?)?;
        let first = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.content)
            .and_then(|c| c.into_iter().next())
            .ok_or(ProviderError::MissingLogprobs)?;
        if first.top_logprobs.is_empty() {
            return Err(ProviderError::MissingLogprobs);
        }
        let top: Vec<(String, f64)> = first
            .top_logprobs
            .into_iter()
            .map(|t| (t.token, t.logprob))
            .collect();
        step_from_surface(&first.token, first.logprob, &top, self.config.top_logprobs)
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<Vec<TokenStep>> {
        if continuation.is_empty() {
            return Err(ProviderError::EmptyContinuation);
        }
        let full = format!("{prompt}{continuation}");
        let body = json!({
            "model": self.config.model,
            "prompt": full,
            "max_tokens": 1,
            "temperature": 0,
            "echo": true,
            "logprobs": self.config.top_logprobs,
        });
        let value = match self.post("completions", body) {
            Err(ProviderError::Http { status, .. }) if matches!(status, 404 | 405 | 501) => {
                return Err(ProviderError::Unsupported("continuation scoring".into()))
            }
            other => other?,
        };
        let resp: CompletionResponse = decode(value)?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| ProviderError::Unsupported("continuation scoring".into()))?;
        let tops = lp
            .top_logprobs
            .ok_or_else(|| ProviderError::Unsupported("continuation scoring".into()))?;
        let start = prompt.chars().count();
        let end = full.chars().count();
        let mut steps = Vec::new();
        for (i, tok) in lp.tokens.iter().enumerate() {
            let offset = *lp.text_offset.get(i).ok_or_else(|| {
                ProviderError::Malformed("text_offset shorter than tokens".into())
            })?;
            if offset < start || offset >= end {
                continue;
            }
            let tok_lp = lp
                .token_logprobs
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| ProviderError::Malformed(format!("no logprob at token {i}")))?;
            let top: Vec<(String, f64)> = tops
                .get(i)
                .and_then(Option::as_ref)
                .ok_or(ProviderError::MissingLogprobs)?
                .iter()
                .filter_map(|(t, v)| v.as_f64().map(|x| (t.clone(), x)))
                .collect();
            steps.push(step_from_surface(
                tok,
                tok_lp,
                &top,
                self.config.top_logprobs,
            )?);
        }
        if steps.is_empty() {
            return Err(ProviderError::EmptyContinuation);
        }
        Ok(steps)
    }
}
