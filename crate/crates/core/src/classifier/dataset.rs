use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Result};
use crate::features::FeatureVector;
use crate::trace::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub answer_id: String,
    pub values: Vec<f64>,
    pub label: Label,
    /// Where the label came from, e.g. `human_feedback`. `None` for the
    /// original corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

/// Feature rows sharing one schema, each with a fact/hallucination label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub schema_id: String,
    pub rows: Vec<LabeledRow>,
}

impl LabeledDataset {
    pub fn new(schema_id: impl Into<String>, rows: Vec<LabeledRow>) -> Result<Self> {
        let ds = Self {
            schema_id: schema_id.into(),
            rows,
        };
        if let Some(first) = ds.rows.first() {
            let width = first.values.len();
            if let Some(bad) = ds.rows.iter().find(|r| r.values.len() != width) {
                return Err(ClassifierError::SchemaMismatch(format!(
                    "row {} has {} values, expected {width}",
                    bad.answer_id,
                    bad.values.len()
                )));
            }
        }
        Ok(ds)
    }

    /// Builds a dataset from labeled feature vectors of a single schema.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let first = vectors.first().ok_or(ClassifierError::EmptyDataset)?;
        let mut rows = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.schema_id != first.schema_id {
                return Err(ClassifierError::SchemaMismatch(format!(
                    "mixed schema ids {} and {}",
                    first.schema_id, v.schema_id
                )));
            }
            let label = v
                .label
                .ok_or_else(|| ClassifierError::Unlabeled(v.answer_id.clone()))?;
            rows.push(LabeledRow {
                answer_id: v.answer_id.clone(),
                values: v.values.clone(),
                label,
                provenance: None,
            });
        }
        Self::new(first.schema_id.clone(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    /// (fact, hallucination) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let hall = self
            .rows
            .iter()
            .filter(|r| r.label == Label::Hallucination)
            .count();
        (self.rows.len() - hall, hall)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label.as_class()).collect()
    }

    pub fn matrix(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.values.as_slice()).collect()
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Self {
        Self {
            schema_id: self.schema_id.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let (fact, hall) = self.class_counts();
        if fact == 0 || hall == 0 {
            return Err(ClassifierError::SingleClass);
        }
        Ok(())
    }
}

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    by_class
}

/// Stratified train/test partition. Each class contributes
/// `round(train_fraction * count)` rows to train; rows keep their original
/// relative order in both parts.
pub fn stratified_split(
    data: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ClassifierError::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let labels = data.labels();
    let mut train_idx = Vec::new();
    for (class, mut idx) in class_indices(&labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        if idx.len() < 2 || n_train == 0 || n_train == idx.len() {
            return Err(ClassifierError::InsufficientSupport {
                class: Label::from_class(class as u8).unwrap(),
                count: idx.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64));
        idx.shuffle(&mut rng);
        train_idx.extend_from_slice(&idx[..n_train]);
    }
    let mut in_train = vec![false; data.len()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_train[i]);
    Ok((data.subset(&train), data.subset(&test)))
}

/// Fold id in `0..folds` for every row, balanced within each class.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for (class, mut idx) in class_indices(labels).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 + class as u64));
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            // continue the round-robin across classes so fold sizes stay even
            assignment[i] = (pos + offset) % folds;
        }
        offset += labels.iter().filter(|&&y| y as usize == class).count();
    }
    assignment
}
