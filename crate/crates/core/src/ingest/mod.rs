//! Inputs to the pipeline: clinical-trial records, prompt templates,
//! labeled feature corpora and seeded synthetic traces.

mod synthetic;
mod templates;
mod trial;

use std::path::Path;

use thiserror::Error;

use crate::classifier::{ClassifierError, LabeledDataset};
use crate::features::{read_feature_corpus, FeatureError};

pub use synthetic::{
    generate_mixture, generate_synthetic_traces, model_ids, standard_mixture, DivergenceRegime,
    EntropyRegime, Phenotype, PhenotypeSpec,
};
pub use templates::{
    render_prompt, template, template_ids, verify_manifest, PromptTemplate, TEMPLATE_COUNT,
};
pub use trial::{has_results, load_trial_dir, parse_trial, parse_trial_value, TrialRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed trial JSON: {0}")]
    Json(String),
    #[error("protocol section required")]
    MissingProtocol,
    #[error("malformed nct id: {0:?}")]
    BadNctId(String),
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("missing slot {slot} for template {template}")]
    MissingSlot { template: String, slot: String },
    #[error("slot {slot} is not declared by template {template}")]
    UnknownSlot { template: String, slot: String },
    #[error("template asset {0} does not match its manifest")]
    TemplateChecksum(String),
    #[error("invalid phenotype spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Reads a labeled feature corpus. Every row must carry a label and share
/// one schema id.
pub fn load_labeled_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let vectors = read_feature_corpus(path)?;
    Ok(LabeledDataset::from_vectors(&vectors)?)
}
