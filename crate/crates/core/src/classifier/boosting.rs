//! Gradient-boosted regression trees with binary logistic loss.
//!
//! Second-order boosting: each tree is grown level-wise to `max_depth` on
//! gradient/hessian histograms, split gain is
//! `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)` and leaves hold `−G/(H+λ)`
//! scaled by the learning rate. Each tree sees a random subset of the
//! features.

use std::cell::RefCell;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::binning::{BinnedMatrix, MAX_BINS};
use super::tree::Tree;
use super::{derive_seed, sigmoid, ClassifierError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub feature_subsample_per_tree: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian mass in each child.
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            n_estimators: 5000,
            learning_rate: 0.005,
            max_depth: 3,
            feature_subsample_per_tree: 0.8,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl BoostingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.max_depth == 0 {
            return Err(ClassifierError::InvalidConfig(
                "boosting n_estimators and max_depth must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ClassifierError::InvalidConfig(
                "learning rate must be > 0".into(),
            ));
        }
        if !(self.feature_subsample_per_tree > 0.0 && self.feature_subsample_per_tree <= 1.0) {
            return Err(ClassifierError::InvalidConfig(
                "feature subsample must lie in (0, 1]".into(),
            ));
        }
        if self.lambda < 0.0 || self.min_child_weight < 0.0 {
            return Err(ClassifierError::InvalidConfig(
                "lambda and min_child_weight must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    /// Initial margin (log-odds of the training prior).
    pub base_margin: f64,
    pub trees: Vec<Tree>,
}

type Hist = Vec<[f64; 2]>;

struct Grower<'a> {
    data: &'a BinnedMatrix,
    /// Interleaved (gradient, hessian) per row.
    gh: &'a [[f64; 2]],
    features: Vec<usize>,
    offsets: Vec<usize>,
    params: &'a BoostingParams,
    /// Recycled histogram buffers; fresh multi-megabyte allocations are slow.
    pool: &'a RefCell<Vec<Hist>>,
}

struct Split {
    feature: usize,
    bin: usize,
}

impl Grower<'_> {
    fn histogram(&self, rows: Option<&[u32]>) -> Hist {
        let size = *self.offsets.last().unwrap();
        let mut hist = self.pool.borrow_mut().pop().unwrap_or_default();
        hist.clear();
        hist.resize(size, [0.0; 2]);
        for (fi, &f) in self.features.iter().enumerate() {
            let col = self.data.column(f);
            let h = &mut hist[self.offsets[fi]..self.offsets[fi + 1]];
            match rows {
                None => {
                    for (&b, gh) in col.iter().zip(self.gh) {
                        let cell = &mut h[b as usize];
                        cell[0] += gh[0];
                        cell[1] += gh[1];
                    }
                }
                Some(rows) => {
                    for &r in rows {
                        let r = r as usize;
                        let gh = self.gh[r];
                        let cell = &mut h[col[r] as usize];
                        cell[0] += gh[0];
                        cell[1] += gh[1];
                    }
                }
            }
        }
        hist
    }

    fn best_split(&self, hist: &Hist, g: f64, h: f64) -> Option<Split> {
        let lambda = self.params.lambda;
        let mcw = self.params.min_child_weight;
        let parent = g * g / (h + lambda);
        let mut best: Option<(Split, f64)> = None;
        let mut gl = [0.0f64; MAX_BINS];
        let mut hl = [0.0f64; MAX_BINS];
        let mut num = [0.0f64; MAX_BINS];
        let mut den = [0.0f64; MAX_BINS];
        for (fi, &f) in self.features.iter().enumerate() {
            let cells = &hist[self.offsets[fi]..self.offsets[fi + 1]];
            let m = cells.len() - 1;
            let (mut sg, mut sh) = (0.0, 0.0);
            for b in 0..m {
                sg += cells[b][0];
                sh += cells[b][1];
                // an empty bin repeats the previous cut; mark it unusable
                hl[b] = if cells[b][1] != 0.0 { sh } else { -1.0 };
                gl[b] = sg;
            }
            split_scores(
                &gl[..m],
                &hl[..m],
                &mut num[..m],
                &mut den[..m],
                g,
                h,
                lambda,
                mcw,
            );
            // compare num/den fractions by cross-multiplication (den > 0)
            let bar = parent + best.as_ref().map_or(1e-12, |(_, bg)| *bg);
            let mut local: Option<usize> = None;
            let (mut bn, mut bd) = (bar, 1.0);
            for b in 0..m {
                if num[b] * bd > bn * den[b] {
                    local = Some(b);
                    (bn, bd) = (num[b], den[b]);
                }
            }
            if let Some(bin) = local {
                let gain = bn / bd - parent;
                if gain > bar - parent {
                    best = Some((Split { feature: f, bin }, gain));
                }
            }
        }
        best.map(|(s, _)| s)
    }

    fn release(&self, hist: Hist) {
        self.pool.borrow_mut().push(hist);
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda) * self.params.learning_rate
    }

    fn grow(&self, rows: Vec<u32>) -> Tree {
        let mut tree = Tree::default();
        let root = tree.push_leaf(0.0);
        let (g, h) = self.sums(&rows);
        tree.value[root as usize] = self.leaf_value(g, h);
        if h < 2.0 * self.params.min_child_weight {
            return tree;
        }
        let hist = self.histogram(None);
        self.split_node(&mut tree, root, rows, hist, g, h, 0);
        tree
    }

    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            let gh = self.gh[r as usize];
            (g + gh[0], h + gh[1])
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn split_node(
        &self,
        tree: &mut Tree,
        node: u32,
        rows: Vec<u32>,
        hist: Hist,
        g: f64,
        h: f64,
        depth: usize,
    ) {
        if depth >= self.params.max_depth {
            self.release(hist);
            return;
        }
        let Some(split) = self.best_split(&hist, g, h) else {
            self.release(hist);
            return;
        };
        let col = self.data.column(split.feature);
        let (l, r): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&row| (col[row as usize] as usize) <= split.bin);
        let (gl, hl) = self.sums(&l);
        let (gr, hr) = (g - gl, h - hl);
        let left = tree.push_leaf(self.leaf_value(gl, hl));
        let right = tree.push_leaf(self.leaf_value(gr, hr));
        tree.make_split(
            node,
            split.feature as u32,
            self.data.cuts[split.feature][split.bin],
            left,
            right,
        );
        if depth + 1 >= self.params.max_depth {
            self.release(hist);
            return;
        }
        // Build the smaller child's histogram; derive the other by subtraction.
        let left_is_small = l.len() <= r.len();
        let small_hist = self.histogram(Some(if left_is_small { &l } else { &r }));
        let mut large_hist = hist;
        for (a, b) in large_hist.iter_mut().zip(&small_hist) {
            a[0] -= b[0];
            a[1] -= b[1];
        }
        let (left_hist, right_hist) = if left_is_small {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };
        self.split_node(tree, left, l, left_hist, gl, hl, depth + 1);
        self.split_node(tree, right, r, right_hist, gr, hr, depth + 1);
    }
}

/// Children score `G_L²/D_L + G_R²/D_R` of every cut as a fraction
/// `num/den` with `D = H + λ`; unusable cuts get `num = -1, den = 1`.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn split_scores_body(
    gl: &[f64],
    hl: &[f64],
    num: &mut [f64],
    den: &mut [f64],
    g: f64,
    h: f64,
    lambda: f64,
    mcw: f64,
) {
    for (((n, d), &gl), &hl) in num.iter_mut().zip(den.iter_mut()).zip(gl).zip(hl) {
        let (gr, hr) = (g - gl, h - hl);
        let (dl, dr) = (hl + lambda, hr + lambda);
        let ok = (hl >= mcw) & (hr >= mcw) & (dl > 0.0) & (dr > 0.0);
        *n = if ok {
            gl * gl * dr + gr * gr * dl
        } else {
            -1.0
        };
        *d = if ok { dl * dr } else { 1.0 };
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn split_scores_avx2(
    gl: &[f64],
    hl: &[f64],
    num: &mut [f64],
    den: &mut [f64],
    g: f64,
    h: f64,
    lambda: f64,
    mcw: f64,
) {
    split_scores_body(gl, hl, num, den, g, h, lambda, mcw)
}

// Wider vectors only; no FMA, so results are bit-identical on every path.
#[allow(clippy::too_many_arguments)]
fn split_scores(
    gl: &[f64],
    hl: &[f64],
    num: &mut [f64],
    den: &mut [f64],
    g: f64,
    h: f64,
    lambda: f64,
    mcw: f64,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        return unsafe { split_scores_avx2(gl, hl, num, den, g, h, lambda, mcw) };
    }
    split_scores_body(gl, hl, num, den, g, h, lambda, mcw)
}

impl GradientBoosting {
    pub fn fit(data: &BinnedMatrix, y: &[u8], params: &BoostingParams, seed: u64) -> Self {
        let n = data.n_rows;
        let pos = y.iter().filter(|&&v| v == 1).count() as f64;
        let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let base_margin = (prior / (1.0 - prior)).ln();
        let mut margin = vec![base_margin; n];
        let mut gh = vec![[0.0; 2]; n];
        let n_sub = ((params.feature_subsample_per_tree * data.n_features as f64).round() as usize)
            .clamp(1, data.n_features.max(1));
        // features that cannot be split are never worth sampling into a histogram
        let splittable: Vec<usize> = (0..data.n_features)
            .filter(|&f| data.n_bins(f) > 1)
            .collect();
        let mut trees = Vec::with_capacity(params.n_estimators);
        let all_rows: Vec<u32> = (0..n as u32).collect();
        let pool = RefCell::new(Vec::new());
        for t in 0..params.n_estimators {
            for i in 0..n {
                let p = sigmoid(margin[i]);
                gh[i] = [p - y[i] as f64, (p * (1.0 - p)).max(1e-16)];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let mut features: Vec<usize> = sample(&mut rng, data.n_features, n_sub)
                .into_iter()
                .filter(|f| splittable.binary_search(f).is_ok())
                .collect();
            features.sort_unstable();
            let mut offsets = Vec::with_capacity(features.len() + 1);
            offsets.push(0);
            for &f in &features {
                offsets.push(offsets.last().unwrap() + data.n_bins(f));
            }
            let grower = Grower {
                data,
                gh: &gh,
                features,
                offsets,
                params,
                pool: &pool,
            };
            let tree = grower.grow(all_rows.clone());
            for i in 0..n {
                margin[i] += tree_value_binned(&tree, data, i);
            }
            trees.push(tree);
        }
        Self { base_margin, trees }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

/// Evaluates a tree grown on `data` for training row `row` using its bins.
fn tree_value_binned(tree: &Tree, data: &BinnedMatrix, row: usize) -> f64 {
    let mut i = 0usize;
    loop {
        let f = tree.feature[i];
        if f == super::tree::LEAF {
            return tree.value[i];
        }
        let f = f as usize;
        let bin = data.column(f)[row] as usize;
        // threshold == cuts[f][b] and bin ≤ b  ⇔  x ≤ threshold
        let goes_left = bin < data.cuts[f].len() && data.cuts[f][bin] <= tree.threshold[i];
        i = if goes_left {
            tree.left[i]
        } else {
            tree.right[i]
        } as usize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn learns_threshold_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.6)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let data = BinnedMatrix::from_rows(&refs);
        let params = BoostingParams {
            n_estimators: 200,
            learning_rate: 0.1,
            ..Default::default()
        };
        let model = GradientBoosting::fit(&data, &y, &params, 1);
        let errors = rows
            .iter()
            .zip(&y)
            .filter(|(r, &l)| (model.predict_proba(r) >= 0.5) != (l == 1))
            .count();
        assert!(errors <= 3, "{errors} training errors");
        assert!(model.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn binned_and_raw_evaluation_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[1] + r[2] > 1.0)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let data = BinnedMatrix::from_rows(&refs);
        let params = BoostingParams {
            n_estimators: 30,
            learning_rate: 0.3,
            ..Default::default()
        };
        let model = GradientBoosting::fit(&data, &y, &params, 2);
        for t in &model.trees {
            for (i, r) in rows.iter().enumerate() {
                assert_eq!(t.predict(r), tree_value_binned(t, &data, i));
            }
        }
    }
}
