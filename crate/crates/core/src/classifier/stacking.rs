use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinnedMatrix;
use super::boosting::{BoostingParams, GradientBoosting};
use super::dataset::{stratified_folds, LabeledDataset};
use super::forest::{ForestParams, RandomForest};
use super::logistic::{LogisticParams, LogisticRegression};
use super::{ClassifierError, Result};
use crate::features::{FeatureSpec, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingConfig {
    pub rf: ForestParams,
    pub lr: LogisticParams,
    pub gbt: BoostingParams,
    pub meta: LogisticParams,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        Self {
            rf: ForestParams::default(),
            lr: LogisticParams::default(),
            gbt: BoostingParams::default(),
            meta: LogisticParams::meta(),
            cv_folds: 5,
            seed: 42,
        }
    }
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(ClassifierError::InvalidConfig(
                "cv_folds must be ≥ 2".into(),
            ));
        }
        self.rf.validate()?;
        self.lr.validate()?;
        self.gbt.validate()?;
        self.meta.validate()
    }
}

/// The three base learners fitted on one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLearners {
    pub random_forest: RandomForest,
    pub logistic: LogisticRegression,
    pub boosting: GradientBoosting,
}

impl BaseLearners {
    fn fit(rows: &[&[f64]], y: &[u8], config: &StackingConfig) -> Self {
        let binned = BinnedMatrix::from_rows(rows);
        Self {
            random_forest: RandomForest::fit(&binned, y, &config.rf, config.seed),
            logistic: LogisticRegression::fit(rows, y, &config.lr),
            boosting: GradientBoosting::fit(&binned, y, &config.gbt, config.seed),
        }
    }

    pub fn predict(&self, x: &[f64]) -> [f64; 3] {
        [
            self.random_forest.predict_proba(x),
            self.logistic.predict_proba(x),
            self.boosting.predict_proba(x),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub config: StackingConfig,
    pub n_train: usize,
    pub n_features: usize,
    /// Fraction of hallucination rows in the training data.
    pub class_prior: f64,
    /// Hash of the run configuration that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Fitted stacking ensemble. Immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_id: String,
    /// Feature layout and extraction settings, when known, so the model can
    /// score raw traces.
    pub feature_spec: Option<FeatureSpec>,
    pub base: BaseLearners,
    pub meta: LogisticRegression,
    pub metadata: TrainingMetadata,
}

/// Fits the stacking ensemble: out-of-fold base-learner probabilities from
/// stratified k-fold CV train the meta-learner, then the base learners are
/// refit on all of `train`.
pub fn train_stacking(train: &LabeledDataset, config: &StackingConfig) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    train.require_both_classes()?;
    LabeledDataset::new(train.schema_id.clone(), train.rows.clone())?;
    let n = train.len();
    if n < config.cv_folds {
        return Err(ClassifierError::InvalidConfig(format!(
            "{n} rows cannot be split into {} folds",
            config.cv_folds
        )));
    }
    let rows = train.matrix();
    let y = train.labels();
    let folds = stratified_folds(&y, config.cv_folds, config.seed);

    // Fold fits and the final refit are independent; run them together.
    let jobs: Vec<Option<usize>> = (0..config.cv_folds).map(Some).chain([None]).collect();
    let mut fitted: Vec<(Option<usize>, BaseLearners)> = jobs
        .into_par_iter()
        .map(|job| {
            let idx: Vec<usize> = match job {
                Some(fold) => (0..n).filter(|&i| folds[i] != fold).collect(),
                None => (0..n).collect(),
            };
            let sub_rows: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
            let sub_y: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            (job, BaseLearners::fit(&sub_rows, &sub_y, config))
        })
        .collect();

    let (_, full) = fitted.pop().expect("refit job present");
    let mut oof = vec![[0.0; 3]; n];
    for (job, learners) in &fitted {
        let fold = job.expect("fold job");
        for i in (0..n).filter(|&i| folds[i] == fold) {
            oof[i] = learners.predict(rows[i]);
        }
    }
    let meta_rows: Vec<&[f64]> = oof.iter().map(|r| r.as_slice()).collect();
    let meta = LogisticRegression::fit(&meta_rows, &y, &config.meta);

    let positives = y.iter().filter(|&&v| v == 1).count();
    Ok(TrainedModel {
        schema_id: train.schema_id.clone(),
        feature_spec: None,
        base: full,
        meta,
        metadata: TrainingMetadata {
            seed: config.seed,
            config: config.clone(),
            n_train: n,
            n_features: train.n_features(),
            class_prior: positives as f64 / n as f64,
            config_hash: None,
        },
    })
}

impl TrainedModel {
    pub fn with_feature_spec(mut self, spec: FeatureSpec) -> Result<Self> {
        if spec.schema.schema_id != self.schema_id {
            return Err(ClassifierError::SchemaMismatch(format!(
                "feature spec {} does not match model schema {}",
                spec.schema.schema_id, self.schema_id
            )));
        }
        self.feature_spec = Some(spec);
        Ok(self)
    }

    /// Probability of hallucination for a raw value row of the model's schema.
    pub fn predict_values(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.metadata.n_features {
            return Err(ClassifierError::SchemaMismatch(format!(
                "expected {} features, got {}",
                self.metadata.n_features,
                values.len()
            )));
        }
        let p = self.meta.predict_proba(&self.base.predict(values));
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn base_probabilities(&self, values: &[f64]) -> [f64; 3] {
        self.base.predict(values)
    }
}

pub fn predict_proba(model: &TrainedModel, v: &FeatureVector) -> Result<f64> {
    if v.schema_id != model.schema_id {
        return Err(ClassifierError::SchemaMismatch(format!(
            "vector schema {} does not match model schema {}",
            v.schema_id, model.schema_id
        )));
    }
    model.predict_values(&v.values)
}

pub fn predict_batch(model: &TrainedModel, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
    vectors
        .par_iter()
        .map(|v| predict_proba(model, v))
        .collect()
}

pub fn predict_dataset(model: &TrainedModel, data: &LabeledDataset) -> Result<Vec<f64>> {
    if data.schema_id != model.schema_id {
        return Err(ClassifierError::SchemaMismatch(format!(
            "dataset schema {} does not match model schema {}",
            data.schema_id, model.schema_id
        )));
    }
    data.rows
        .par_iter()
        .map(|r| model.predict_values(&r.values))
        .collect()
}
