//! Token-level log-probability traces produced by forced inference.
//!
//! One [`EnsembleTrace`] bundles the per-model [`ModelTrace`]s collected for a
//! single answer (and one rephrasing variant of its question). All
//! log-probabilities are natural logarithms.
//!
//! The canonical on-disk form is line-delimited JSON, one ensemble per line:
//!
//! ```text
//! {"answer_id":"a1","question_id":"q1","variant_id":"0","label":"fact",
//!  "models":[{"model_id":"m0","k":3,"steps":[{"tok":7,"lp":-0.1,"rank":1,"top":[[7,-0.1],[3,-2.4]]}]}]}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the total probability mass exposed by one step.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Default top-k width for engine-side forced inference.
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record at `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(
        "duplicate trace (answer_id={answer_id}, variant_id={variant_id}, model_id={model_id})"
    )]
    Duplicate {
        answer_id: String,
        variant_id: String,
        model_id: String,
    },
    #[error("{0}")]
    Invariant(String),
    #[error("length mismatch {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot align an empty trace")]
    EmptyAlignment,
}

pub type Result<T, E = TraceError> = std::result::Result<T, E>;

/// Ground-truth label of an answer. Encoded as fact=0, hallucination=1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fact,
    Hallucination,
}

impl Label {
    pub fn as_class(self) -> u8 {
        match self {
            Label::Fact => 0,
            Label::Hallucination => 1,
        }
    }

    pub fn from_class(class: u8) -> Option<Self> {
        match class {
            0 => Some(Label::Fact),
            1 => Some(Label::Hallucination),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fact => "fact",
            Label::Hallucination => "hallucination",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the k most probable tokens at a generation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopCandidate {
    pub token_id: u64,
    pub logprob: f64,
}

impl TopCandidate {
    pub fn new(token_id: u64, logprob: f64) -> Self {
        Self { token_id, logprob }
    }

    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// Sort candidates by log-probability descending, token id ascending on ties.
pub fn sort_candidates(top: &mut [TopCandidate]) {
    top.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then(a.token_id.cmp(&b.token_id))
    });
}

/// A single generation step of a forced-inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStep {
    generated_token_id: u64,
    generated_logprob: f64,
    rank: u32,
    top: Vec<TopCandidate>,
}

impl TokenStep {
    /// Builds a step from already-ranked data and checks every invariant.
    /// `k` is the top-k width of the owning trace and fixes the rank sentinel.
    pub fn new(
        generated_token_id: u64,
        generated_logprob: f64,
        rank: u32,
        top: Vec<TopCandidate>,
        k: usize,
    ) -> Result<Self> {
        let step = Self {
            generated_token_id,
            generated_logprob,
            rank,
            top,
        };
        step.validate(k).map_err(TraceError::Invariant)?;
        Ok(step)
    }

    /// Builds a step from unordered candidates: sorts them and derives the rank
    /// of the generated token (k+1 when it is not among the candidates).
    pub fn from_candidates(
        generated_token_id: u64,
        generated_logprob: f64,
        mut top: Vec<TopCandidate>,
        k: usize,
    ) -> Result<Self> {
        sort_candidates(&mut top);
        let rank = match top.iter().position(|c| c.token_id == generated_token_id) {
            Some(pos) => pos as u32 + 1,
            None => k as u32 + 1,
        };
        Self::new(generated_token_id, generated_logprob, rank, top, k)
    }

    pub fn generated_token_id(&self) -> u64 {
        self.generated_token_id
    }

    pub fn generated_logprob(&self) -> f64 {
        self.generated_logprob
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn top(&self) -> &[TopCandidate] {
        &self.top
    }

    fn validate(&self, k: usize) -> std::result::Result<(), String> {
        if self.top.is_empty() {
            return Err("top candidate list must not be empty".into());
        }
        if self.top.len() > k {
            return Err(format!("{} candidates exceed k={k}", self.top.len()));
        }
        if !self.generated_logprob.is_finite() && self.generated_logprob != f64::NEG_INFINITY {
            return Err("generated logprob must be a number".into());
        }
        if self.generated_logprob > 0.0 {
            return Err("logprob must be ≤ 0".into());
        }
        let mut seen = HashSet::with_capacity(self.top.len());
        let mut mass = 0.0;
        for (i, c) in self.top.iter().enumerate() {
            if c.logprob.is_nan() {
                return Err("logprob must be a number".into());
            }
            if c.logprob > 0.0 {
                return Err("logprob must be ≤ 0".into());
            }
            if !seen.insert(c.token_id) {
                return Err(format!("token {} listed twice", c.token_id));
            }
            if i > 0 {
                let prev = &self.top[i - 1];
                let ordered = prev.logprob > c.logprob
                    || (prev.logprob == c.logprob && prev.token_id < c.token_id);
                if !ordered {
                    return Err(format!("candidates not sorted at position {}", i + 1));
                }
            }
            mass += c.prob();
        }
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(format!("candidate mass {mass} exceeds 1"));
        }
        match self
            .top
            .iter()
            .position(|c| c.token_id == self.generated_token_id)
        {
            Some(pos) => {
                if self.rank as usize != pos + 1 {
                    return Err(format!(
                        "rank {} inconsistent with candidate position {}",
                        self.rank,
                        pos + 1
                    ));
                }
                if (self.top[pos].logprob - self.generated_logprob).abs() > 1e-9 {
                    return Err("generated logprob differs from its candidate entry".into());
                }
            }
            None => {
                if self.rank as usize != k + 1 {
                    return Err(format!(
                        "generated token outside top-k must have rank {} (got {})",
                        k + 1,
                        self.rank
                    ));
                }
            }
        }
        Ok(())
    }
}

/// All steps of one ensemble member over one answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrace {
    model_id: String,
    k: usize,
    steps: Vec<TokenStep>,
}

impl ModelTrace {
    pub fn new(model_id: impl Into<String>, k: usize, steps: Vec<TokenStep>) -> Result<Self> {
        let trace = Self {
            model_id: model_id.into(),
            k,
            steps,
        };
        trace.validate().map_err(TraceError::Invariant)?;
        Ok(trace)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn steps(&self) -> &[TokenStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.model_id.is_empty() {
            return Err("model_id must not be empty".into());
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if self.steps.is_empty() {
            return Err(format!("model {} has no steps", self.model_id));
        }
        for (i, step) in self.steps.iter().enumerate() {
            step.validate(self.k)
                .map_err(|e| format!("model {} step {i}: {e}", self.model_id))?;
        }
        Ok(())
    }
}

/// Per-answer bundle of aligned per-model traces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrace {
    answer_id: String,
    question_id: String,
    variant_id: String,
    label: Option<Label>,
    model_traces: Vec<ModelTrace>,
}

impl EnsembleTrace {
    pub fn new(
        answer_id: impl Into<String>,
        question_id: impl Into<String>,
        variant_id: impl Into<String>,
        label: Option<Label>,
        model_traces: Vec<ModelTrace>,
    ) -> Result<Self> {
        let trace = Self {
            answer_id: answer_id.into(),
            question_id: question_id.into(),
            variant_id: variant_id.into(),
            label,
            model_traces,
        };
        trace.check_models()?;
        Ok(trace)
    }

    fn check_models(&self) -> Result<()> {
        if self.model_traces.is_empty() {
            return Err(TraceError::Invariant(format!(
                "answer {} has no model traces",
                self.answer_id
            )));
        }
        let mut ids = HashSet::new();
        for m in &self.model_traces {
            if !ids.insert(m.model_id()) {
                return Err(TraceError::Duplicate {
                    answer_id: self.answer_id.clone(),
                    variant_id: self.variant_id.clone(),
                    model_id: m.model_id().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn answer_id(&self) -> &str {
        &self.answer_id
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn variant_id(&self) -> &str {
        &self.variant_id
    }

    pub fn label(&self) -> Option<Label> {
        self.label
    }

    pub fn model_traces(&self) -> &[ModelTrace] {
        &self.model_traces
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelTrace> {
        self.model_traces.iter().find(|m| m.model_id() == model_id)
    }

    /// Copy of this trace with a different label.
    pub fn with_label(&self, label: Option<Label>) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }
}

// Wire records. Kept separate from the domain types so that every decoded
// record passes through the validating constructors.

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub answer_id: String,
    pub question_id: String,
    pub variant_id: String,
    pub label: Option<Label>,
    pub models: Vec<ModelRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub k: usize,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub tok: u64,
    pub lp: f64,
    pub rank: u32,
    pub top: Vec<(u64, f64)>,
}

impl From<&EnsembleTrace> for TraceRecord {
    fn from(t: &EnsembleTrace) -> Self {
        TraceRecord {
            answer_id: t.answer_id.clone(),
            question_id: t.question_id.clone(),
            variant_id: t.variant_id.clone(),
            label: t.label,
            models: t
                .model_traces
                .iter()
                .map(|m| ModelRecord {
                    model_id: m.model_id.clone(),
                    k: m.k,
                    steps: m
                        .steps
                        .iter()
                        .map(|s| StepRecord {
                            tok: s.generated_token_id,
                            lp: s.generated_logprob,
                            rank: s.rank,
                            top: s.top.iter().map(|c| (c.token_id, c.logprob)).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<TraceRecord> for EnsembleTrace {
    type Error = TraceError;

    fn try_from(r: TraceRecord) -> Result<Self> {
        let mut models = Vec::with_capacity(r.models.len());
        for m in r.models {
            let k = m.k;
            let steps = m
                .steps
                .into_iter()
                .map(|s| {
                    let top = s
                        .top
                        .into_iter()
                        .map(|(token_id, logprob)| TopCandidate { token_id, logprob })
                        .collect();
                    TokenStep::new(s.tok, s.lp, s.rank, top, k)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| TraceError::Invariant(format!("model {}: {e}", m.model_id)))?;
            models.push(ModelTrace::new(m.model_id, k, steps)?);
        }
        EnsembleTrace::new(r.answer_id, r.question_id, r.variant_id, r.label, models)
    }
}

/// Decodes one JSON line into a validated trace. `line` is 1-based and only
/// used in diagnostics.
pub fn parse_trace_line(text: &str, line: usize) -> Result<EnsembleTrace> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let record: TraceRecord =
        serde_path_to_error::deserialize(de).map_err(|e| TraceError::Malformed {
            line,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    EnsembleTrace::try_from(record).map_err(|e| match e {
        TraceError::Invariant(message) => TraceError::Invalid { line, message },
        other => TraceError::Invalid {
            line,
            message: other.to_string(),
        },
    })
}

pub fn trace_to_json(trace: &EnsembleTrace) -> String {
    serde_json::to_string(&TraceRecord::from(trace)).expect("trace records always serialize")
}

/// Reads a trace file in file order. Blank lines are skipped.
pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<EnsembleTrace>> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut traces = Vec::new();
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let trace = parse_trace_line(&line, idx + 1)?;
        for m in trace.model_traces() {
            let key = (
                trace.answer_id.clone(),
                trace.variant_id.clone(),
                m.model_id.clone(),
            );
            if !seen.insert(key) {
                return Err(TraceError::Duplicate {
                    answer_id: trace.answer_id.clone(),
                    variant_id: trace.variant_id.clone(),
                    model_id: m.model_id.clone(),
                });
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

/// Writes traces as line-delimited JSON. Nothing is written if any trace
/// violates an invariant or the corpus repeats an (answer_id, variant_id).
pub fn write_trace_file(traces: &[EnsembleTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut keys = HashSet::new();
    for t in traces {
        t.check_models()?;
        for m in &t.model_traces {
            m.validate().map_err(TraceError::Invariant)?;
        }
        if !keys.insert((t.answer_id.as_str(), t.variant_id.as_str())) {
            return Err(TraceError::Invariant(format!(
                "answer_id {} variant_id {} repeated",
                t.answer_id, t.variant_id
            )));
        }
    }
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for t in traces {
        out.write_all(trace_to_json(t).as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// How steps of two traces are paired for cross-model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignStrategy {
    /// Identity pairing; requires equal lengths.
    #[default]
    Strict,
    /// Proportional index mapping from `a` onto `b`.
    Positional,
}

pub fn align_pair(
    a: &ModelTrace,
    b: &ModelTrace,
    strategy: AlignStrategy,
) -> Result<Vec<(usize, usize)>> {
    align_lengths(a.len(), b.len(), strategy)
}

/// Index pairing for sequences of the given lengths.
pub fn align_lengths(
    len_a: usize,
    len_b: usize,
    strategy: AlignStrategy,
) -> Result<Vec<(usize, usize)>> {
    if len_a == 0 || len_b == 0 {
        return Err(TraceError::EmptyAlignment);
    }
    match strategy {
        AlignStrategy::Strict => {
            if len_a != len_b {
                return Err(TraceError::LengthMismatch(len_a, len_b));
            }
            Ok((0..len_a).map(|i| (i, i)).collect())
        }
        AlignStrategy::Positional => {
            if len_a == 1 {
                return Ok(vec![(0, 0)]);
            }
            let scale = (len_b - 1) as f64 / (len_a - 1) as f64;
            Ok((0..len_a)
                .map(|i| (i, ((i as f64) * scale).round() as usize))
                .collect())
        }
    }
}
