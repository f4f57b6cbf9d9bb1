use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::binning::BinnedMatrix;
use super::tree::{grow_gini_tree, GiniParams, Tree};
use super::{derive_seed, ClassifierError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows every tree until its leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: u32,
    pub min_samples_leaf: u32,
    /// Features tried per split; `None` means floor(sqrt(n_features)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_samples_split < 2 || self.min_samples_leaf == 0 {
            return Err(ClassifierError::InvalidConfig(
                "random forest counts must be positive (min_samples_split ≥ 2)".into(),
            ));
        }
        if self.max_depth == Some(0) || self.max_features == Some(0) {
            return Err(ClassifierError::InvalidConfig(
                "random forest max_depth/max_features must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit(data: &BinnedMatrix, y: &[u8], params: &ForestParams, seed: u64) -> Self {
        let n = data.n_rows;
        let max_features = params
            .max_features
            .unwrap_or_else(|| (data.n_features as f64).sqrt().floor() as usize)
            .clamp(1, data.n_features.max(1));
        let gini = GiniParams {
            max_depth: params.max_depth,
            min_samples_split: params.min_samples_split,
            min_samples_leaf: params.min_samples_leaf,
            max_features,
        };
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let mut weights = vec![0u32; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weights[rng.random_range(0..n)] += 1;
                    }
                } else {
                    weights.fill(1);
                }
                grow_gini_tree(data, y, &weights, &gini, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}
