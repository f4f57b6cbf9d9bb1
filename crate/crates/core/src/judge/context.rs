//! Trusted context documents keyed by trial id (or any string key).
//! Layout: a directory of `<key>.txt` files, or one JSON object file
//! mapping keys to document text.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JudgeError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextStore {
    docs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub key: String,
    pub text: String,
    /// Set when the document came from the keyword fallback.
    pub overlap: Option<f64>,
}

impl ContextStore {
    pub fn from_map(docs: BTreeMap<String, String>) -> Self {
        Self { docs }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |source| JudgeError::Io {
            path: path.display().to_string(),
            source,
        };
        if path.is_dir() {
            let mut docs = BTreeMap::new();
            for entry in fs::read_dir(path).map_err(io)? {
                let p = entry.map_err(io)?.path();
                if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let Some(key) = p.file_stem().and_then(|s| s.to_str()) else {
                    continue;
                };
                let text = fs::read_to_string(&p).map_err(|source| JudgeError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                docs.insert(key.to_string(), text);
            }
            Ok(Self { docs })
        } else {
            let text = fs::read_to_string(path).map_err(io)?;
            let docs = serde_json::from_str(&text).map_err(|e| JudgeError::MalformedStore {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            Ok(Self { docs })
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.docs.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of the distinct query tokens that occur in the document.
pub fn overlap_score(query: &str, doc: &str) -> f64 {
    let q = tokens(query);
    if q.is_empty() {
        return 0.0;
    }
    let d = tokens(doc);
    q.intersection(&d).count() as f64 / q.len() as f64
}

/// Exact lookup by key. With `fallback`, an absent key is treated as a
/// query and the document with the highest token overlap is returned
/// (ties to the smallest key); zero overlap is still a miss.
pub fn retrieve_context(store: &ContextStore, key: &str, fallback: bool) -> Result<Retrieved> {
    if let Some(text) = store.get(key) {
        return Ok(Retrieved {
            key: key.to_string(),
            text: text.to_string(),
            overlap: None,
        });
    }
    if fallback {
        let mut best: Option<(&String, &String, f64)> = None;
        for (k, text) in &store.docs {
            let s = overlap_score(key, text);
            if s > 0.0 && best.is_none_or(|(_, _, b)| s > b) {
                best = Some((k, text, s));
            }
        }
        if let Some((k, text, s)) = best {
            return Ok(Retrieved {
                key: k.clone(),
                text: text.clone(),
                overlap: Some(s),
            });
        }
    }
    Err(JudgeError::ContextNotFound(key.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ContextStore {
        ContextStore::from_map(BTreeMap::from([
            (
                "NCT1".to_string(),
                "Aspirin lowers fever in adults.".to_string(),
            ),
            (
                "NCT2".to_string(),
                "Metformin for type 2 diabetes.".to_string(),
            ),
        ]))
    }

    #[test]
    fn exact_and_missing() {
        let s = store();
        assert_eq!(retrieve_context(&s, "NCT2", false).unwrap().overlap, None);
        assert!(matches!(
            retrieve_context(&s, "NCT9", false),
            Err(JudgeError::ContextNotFound(_))
        ));
    }

    #[test]
    fn fallback_scores_overlap() {
        let r = retrieve_context(&store(), "diabetes metformin dosing", true).unwrap();
        assert_eq!(r.key, "NCT2");
        assert!((r.overlap.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(retrieve_context(&store(), "zebra", true).is_err());
    }
}
