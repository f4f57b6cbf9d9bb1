//! Prompt templates shipped as read-only assets. Slots use `{{name}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{IngestError, Result};

pub const TEMPLATE_COUNT: usize = 20;

macro_rules! assets {
    ($($id:literal),* $(,)?) => {
        &[$(($id, include_str!(concat!("../../assets/templates/", $id, ".txt")))),*]
    };
}

static SOURCES: &[(&str, &str)] = assets!(
    "overview",
    "results",
    "conclusions",
    "question_1",
    "question_2",
    "question_3",
    "question_4",
    "question_5",
    "question_6",
    "question_7",
    "question_8",
    "question_9",
    "question_10",
    "question_11",
    "question_12",
    "question_13",
    "question_14",
    "question_15",
    "umls_factual",
    "umls_counterfactual",
);

static MANIFEST_JSON: &str = include_str!("../../assets/templates/manifest.json");

static SLOT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{([a-z_][a-z0-9_]*)\}\}").expect("valid regex"));

#[derive(Debug, Deserialize)]
struct Manifest {
    templates: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    slots: Vec<String>,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub body: &'static str,
    pub slots: BTreeSet<String>,
}

static TEMPLATES: LazyLock<BTreeMap<&'static str, PromptTemplate>> = LazyLock::new(|| {
    SOURCES
        .iter()
        .map(|&(id, body)| {
            let slots = SLOT.captures_iter(body).map(|c| c[1].to_string()).collect();
            (id, PromptTemplate { id, body, slots })
        })
        .collect()
});

pub fn template_ids() -> Vec<&'static str> {
    SOURCES.iter().map(|(id, _)| *id).collect()
}

pub fn template(id: &str) -> Result<&'static PromptTemplate> {
    TEMPLATES
        .get(id)
        .ok_or_else(|| IngestError::UnknownTemplate(id.to_string()))
}

/// Checks every asset against the manifest's checksum and slot list.
pub fn verify_manifest() -> Result<()> {
    let manifest: Manifest =
        serde_json::from_str(MANIFEST_JSON).map_err(|e| IngestError::Json(e.to_string()))?;
    if manifest.templates.len() != SOURCES.len() {
        return Err(IngestError::TemplateChecksum("manifest".into()));
    }
    for (id, body) in SOURCES {
        let entry = manifest
            .templates
            .get(*id)
            .ok_or_else(|| IngestError::TemplateChecksum(id.to_string()))?;
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        let declared: BTreeSet<String> = entry.slots.iter().cloned().collect();
        if digest != entry.sha256 || declared != template(id)?.slots {
            return Err(IngestError::TemplateChecksum(id.to_string()));
        }
    }
    Ok(())
}

/// Substitutes every slot in one pass; values are inserted verbatim and never
/// rescanned for slots.
pub fn render_prompt(id: &str, slots: &BTreeMap<String, String>) -> Result<String> {
    let t = template(id)?;
    for name in &t.slots {
        if !slots.contains_key(name) {
            return Err(IngestError::MissingSlot {
                template: id.into(),
                slot: name.clone(),
            });
        }
    }
    if let Some(extra) = slots.keys().find(|k| !t.slots.contains(*k)) {
        return Err(IngestError::UnknownSlot {
            template: id.into(),
            slot: extra.clone(),
        });
    }
    Ok(SLOT
        .replace_all(t.body, |c: &regex::Captures| slots[&c[1]].clone())
        .into_owned())
}
