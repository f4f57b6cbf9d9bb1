//! Registry trial records: `protocolSection`, `resultsSection`,
//! `derivedSection`, plus any other top-level keys kept verbatim.

use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde_json::{Map, Value};

use super::{IngestError, Result};

static NCT_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^NCT\d{8}$").expect("valid regex"));

const PROTOCOL: &str = "protocolSection";
const RESULTS: &str = "resultsSection";
const DERIVED: &str = "derivedSection";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub nct_id: String,
    pub protocol: Value,
    pub results: Option<Value>,
    pub derived: Option<Value>,
    pub extras: Map<String, Value>,
}

impl TrialRecord {
    /// Re-serializes the record; `parse_trial_value(r.to_value()) == r`.
    pub fn to_value(&self) -> Value {
        let mut out = self.extras.clone();
        out.insert(PROTOCOL.into(), self.protocol.clone());
        if let Some(r) = &self.results {
            out.insert(RESULTS.into(), r.clone());
        }
        if let Some(d) = &self.derived {
            out.insert(DERIVED.into(), d.clone());
        }
        Value::Object(out)
    }

    pub fn brief_title(&self) -> Option<&str> {
        self.protocol
            .pointer("/identificationModule/briefTitle")
            .and_then(Value::as_str)
    }
}

pub fn parse_trial(raw: &str) -> Result<TrialRecord> {
    let value: Value = serde_json::from_str(raw).map_err(|e| IngestError::Json(e.to_string()))?;
    parse_trial_value(value)
}

pub fn parse_trial_value(value: Value) -> Result<TrialRecord> {
    let Value::Object(mut map) = value else {
        return Err(IngestError::Json("top level must be an object".into()));
    };
    let protocol = match map.remove(PROTOCOL) {
        Some(p @ Value::Object(_)) => p,
        _ => return Err(IngestError::MissingProtocol),
    };
    let nct_id = protocol
        .pointer("/identificationModule/nctId")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if !NCT_ID.is_match(&nct_id) {
        return Err(IngestError::BadNctId(nct_id));
    }
    let results = map.remove(RESULTS).filter(|v| !v.is_null());
    let derived = map.remove(DERIVED).filter(|v| !v.is_null());
    Ok(TrialRecord {
        nct_id,
        protocol,
        results,
        derived,
        extras: map,
    })
}

/// True when a results section exists and holds at least one entry.
pub fn has_results(record: &TrialRecord) -> bool {
    match &record.results {
        Some(Value::Object(m)) => !m.is_empty(),
        Some(Value::Array(a)) => !a.is_empty(),
        Some(Value::Null) | None => false,
        Some(_) => true,
    }
}

/// Parses every `*.json` file of a directory, ordered by file name.
pub fn load_trial_dir(dir: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let dir = dir.as_ref();
    let io_err = |path: &Path, source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .par_iter()
        .map(|p| {
            let raw = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            parse_trial(&raw)
        })
        .collect()
}
