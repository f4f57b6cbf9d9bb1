//! Line-delimited JSON helpers and the artifact records exchanged between
//! subcommands.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use halluguard::judge::{AnswerJudgement, Category};
use halluguard::trace::Label;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{AppError, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(AppError::io(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(AppError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let v = serde_path_to_error::deserialize(de).map_err(|e| AppError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(AppError::io(path))?);
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| AppError::io(path)(e.into()))?;
        out.write_all(b"\n").map_err(AppError::io(path))?;
    }
    out.flush().map_err(AppError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value).expect("artifact serializes");
    body.push(b'\n');
    fs::write(path, body).map_err(AppError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| AppError::Malformed {
        path: path.display().to_string(),
        line: e.inner().line(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_id: String,
    pub hallucination_probability: f64,
    /// Ground truth, when the input carried one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub schema_id: String,
    pub config_hash: String,
}

/// One answer to be judged against the context stored under `context_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub answer_id: String,
    pub context_key: String,
    pub text: String,
    /// Free-form grouping for distribution tables, e.g. the context source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgementRecord {
    pub answer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub context_key: String,
    /// Set when the context came from the keyword fallback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_overlap: Option<f64>,
    pub category: Option<Category>,
    pub judgement: AnswerJudgement,
    pub config_hash: String,
}

/// Registered statements for the mock judge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFacts {
    pub facts: Vec<String>,
    pub negations: std::collections::BTreeMap<String, String>,
}
