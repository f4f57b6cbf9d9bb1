//! Versioned JSON model files.
//!
//! ```text
//! {"format":"halluguard-stacking","version":1,"schema_id":"…","checksum":"…","model":{…}}
//! ```
//!
//! `checksum` is the SHA-256 of the serialized `model` object; any edit to
//! the body (schema id included) fails the load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stacking::TrainedModel;
use super::{ClassifierError, Result};

pub const MODEL_FORMAT: &str = "halluguard-stacking";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelFileOut<'a> {
    format: &'a str,
    version: u32,
    schema_id: &'a str,
    checksum: String,
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ModelFileIn {
    schema_id: String,
    checksum: String,
    model: TrainedModel,
}

fn checksum(model: &TrainedModel) -> String {
    let body = serde_json::to_vec(model).expect("model serializes");
    hex::encode(Sha256::digest(&body))
}

pub fn model_to_bytes(model: &TrainedModel) -> Vec<u8> {
    let file = ModelFileOut {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        schema_id: &model.schema_id,
        checksum: checksum(model),
        model,
    };
    serde_json::to_vec(&file).expect("model serializes")
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let corrupt = |e: serde_json::Error| ClassifierError::CorruptModel(e.to_string());
    let header: Header = serde_json::from_slice(bytes).map_err(corrupt)?;
    if header.format != MODEL_FORMAT {
        return Err(ClassifierError::CorruptModel(format!(
            "unexpected format {}",
            header.format
        )));
    }
    if header.version != MODEL_VERSION {
        return Err(ClassifierError::UnsupportedVersion(header.version));
    }
    let file: ModelFileIn = serde_json::from_slice(bytes).map_err(corrupt)?;
    if file.schema_id != file.model.schema_id {
        return Err(ClassifierError::SchemaMismatch(format!(
            "header schema {} differs from model schema {}",
            file.schema_id, file.model.schema_id
        )));
    }
    if checksum(&file.model) != file.checksum {
        return Err(ClassifierError::CorruptModel("checksum mismatch".into()));
    }
    if let Some(spec) = &file.model.feature_spec {
        if spec.schema.schema_id != file.model.schema_id || !spec.schema.is_consistent() {
            return Err(ClassifierError::SchemaMismatch(
                "embedded feature schema does not match model schema".into(),
            ));
        }
    }
    Ok(file.model)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_bytes(&bytes)
}

/// Hex SHA-256 of a model file's bytes, used as provenance in plans and
/// service health output.
pub fn file_hash(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
