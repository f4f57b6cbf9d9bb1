//! Stacking ensemble over feature vectors: random forest, logistic
//! regression and gradient-boosted trees as base learners with a logistic
//! meta-learner fitted on out-of-fold predictions. Also evaluation metrics,
//! PCA projections and model persistence.

mod binning;
mod boosting;
mod dataset;
mod forest;
mod logistic;
mod metrics;
mod pca;
mod persist;
mod stacking;
mod tree;

use thiserror::Error;

use crate::trace::Label;

pub use boosting::{BoostingParams, GradientBoosting};
pub use dataset::{stratified_folds, stratified_split, LabeledDataset, LabeledRow};
pub use forest::{ForestParams, RandomForest};
pub use logistic::{LogisticParams, LogisticRegression};
pub use metrics::{
    auc, evaluate, evaluate_scores, permutation_importance, roc_curve, write_roc_csv,
    AverageMetrics, ClassMetrics, EvalReport, RocPoint,
};
pub use pca::{pca_projection, pca_rows, PcaResult};
pub use persist::{file_hash, load_model, model_from_bytes, model_to_bytes, save_model};
pub use stacking::{
    predict_batch, predict_dataset, predict_proba, train_stacking, BaseLearners, StackingConfig,
    TrainedModel, TrainingMetadata,
};
pub use tree::Tree;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("both classes must be present")]
    SingleClass,
    #[error("insufficient class support: {class} has {count} rows")]
    InsufficientSupport { class: Label, count: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row {0} has no label")]
    Unlabeled(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// SplitMix64 step; derives independent per-tree seeds from one run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
