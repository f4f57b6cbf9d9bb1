//! Flat binary decision trees and the Gini tree grower used by the forest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::binning::BinnedMatrix;

pub const LEAF: u32 = u32::MAX;

/// Array-of-nodes tree. Node 0 is the root; a node with `feature == LEAF`
/// is a leaf holding `value`. Internal nodes send `x[feature] <= threshold`
/// to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        let mut t = Tree::default();
        t.push_leaf(value);
        t
    }

    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    pub(crate) fn push_leaf(&mut self, value: f64) -> u32 {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        (self.feature.len() - 1) as u32
    }

    pub(crate) fn make_split(
        &mut self,
        node: u32,
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    ) {
        let i = node as usize;
        self.feature[i] = feature;
        self.threshold[i] = threshold;
        self.left[i] = left;
        self.right[i] = right;
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let f = self.feature[i];
            if f == LEAF {
                return self.value[i];
            }
            i = if x[f as usize] <= self.threshold[i] {
                self.left[i]
            } else {
                self.right[i]
            } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            if t.feature[i] == LEAF {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        if self.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GiniParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: u32,
    pub min_samples_leaf: u32,
    pub max_features: usize,
}

struct Best {
    feature: usize,
    bin: usize,
    score: f64,
}

/// Grows an unpruned classification tree on weighted rows (weights are
/// bootstrap multiplicities). Leaves store the weighted fraction of class 1.
pub fn grow_gini_tree<R: Rng>(
    data: &BinnedMatrix,
    y: &[u8],
    weights: &[u32],
    params: &GiniParams,
    rng: &mut R,
) -> Tree {
    let rows: Vec<u32> = (0..data.n_rows as u32)
        .filter(|&r| weights[r as usize] > 0)
        .collect();
    let mut tree = Tree::default();
    let root = tree.push_leaf(0.0);
    let mut stack = vec![(root, rows, 0usize)];
    let mut features: Vec<usize> = (0..data.n_features).collect();
    let mut scratch = Scratch::default();

    while let Some((node, rows, depth)) = stack.pop() {
        let (mut w, mut pos) = (0u64, 0u64);
        for &r in &rows {
            let wr = weights[r as usize] as u64;
            w += wr;
            pos += wr * y[r as usize] as u64;
        }
        tree.value[node as usize] = pos as f64 / w as f64;
        let pure = pos == 0 || pos == w;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if pure
            || depth_capped
            || w < params.min_samples_split as u64
            || w < 2 * params.min_samples_leaf as u64
        {
            continue;
        }
        let Some(best) = find_gini_split(
            data,
            y,
            weights,
            &rows,
            (w, pos),
            params,
            &mut features,
            rng,
            &mut scratch,
        ) else {
            continue;
        };
        let col = data.column(best.feature);
        let (l, r): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&row| (col[row as usize] as usize) <= best.bin);
        let left = tree.push_leaf(0.0);
        let right = tree.push_leaf(0.0);
        tree.make_split(
            node,
            best.feature as u32,
            data.cuts[best.feature][best.bin],
            left,
            right,
        );
        stack.push((right, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    tree
}

#[derive(Default)]
struct Scratch {
    w: Vec<u64>,
    p: Vec<u64>,
    pairs: Vec<(u8, u32, u8)>,
}

#[allow(clippy::too_many_arguments)]
fn find_gini_split<R: Rng>(
    data: &BinnedMatrix,
    y: &[u8],
    weights: &[u32],
    rows: &[u32],
    (w_total, p_total): (u64, u64),
    params: &GiniParams,
    features: &mut [usize],
    rng: &mut R,
    s: &mut Scratch,
) -> Option<Best> {
    let mut best: Option<Best> = None;
    let mut visited = 0;
    let n_features = features.len();
    let min_leaf = params.min_samples_leaf as u64;
    // Sample features without replacement; constant ones do not count
    // against max_features.
    for i in 0..n_features {
        if visited >= params.max_features {
            break;
        }
        let j = rng.random_range(i..n_features);
        features.swap(i, j);
        let f = features[i];
        let n_bins = data.n_bins(f);
        if n_bins < 2 {
            continue;
        }
        let col = data.column(f);

        // Score of a candidate split: Σ_children (pos² + neg²) / w, which
        // ranks splits identically to the weighted Gini decrease.
        let consider = |bin: usize, wl: u64, pl: u64, best: &mut Option<Best>| {
            let wr = w_total - wl;
            if wl < min_leaf || wr < min_leaf || wl == 0 || wr == 0 {
                return;
            }
            let pr = p_total - pl;
            let (nl, nr) = (wl - pl, wr - pr);
            let score =
                ((pl * pl + nl * nl) as f64) / wl as f64 + ((pr * pr + nr * nr) as f64) / wr as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                *best = Some(Best {
                    feature: f,
                    bin,
                    score,
                });
            }
        };

        let mut constant = true;
        if rows.len() * 4 < n_bins {
            s.pairs.clear();
            s.pairs.extend(
                rows.iter()
                    .map(|&r| (col[r as usize], weights[r as usize], y[r as usize])),
            );
            s.pairs.sort_unstable_by_key(|p| p.0);
            let (mut wl, mut pl) = (0u64, 0u64);
            for k in 0..s.pairs.len() {
                let (b, wr, yr) = s.pairs[k];
                wl += wr as u64;
                pl += wr as u64 * yr as u64;
                if k + 1 < s.pairs.len() && s.pairs[k + 1].0 != b {
                    constant = false;
                    consider(b as usize, wl, pl, &mut best);
                }
            }
        } else {
            s.w.clear();
            s.w.resize(n_bins, 0);
            s.p.clear();
            s.p.resize(n_bins, 0);
            for &r in rows {
                let b = col[r as usize] as usize;
                let wr = weights[r as usize] as u64;
                s.w[b] += wr;
                s.p[b] += wr * y[r as usize] as u64;
            }
            let (mut wl, mut pl) = (0u64, 0u64);
            for b in 0..n_bins - 1 {
                if s.w[b] == 0 {
                    continue;
                }
                wl += s.w[b];
                pl += s.p[b];
                if wl == w_total {
                    break;
                }
                constant = false;
                consider(b, wl, pl, &mut best);
            }
        }
        if !constant {
            visited += 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_data_gives_stump() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let data = BinnedMatrix::from_rows(&refs);
        let params = GiniParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = grow_gini_tree(&data, &y, &[1; 20], &params, &mut rng);
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.threshold[0], 9.5);
        assert_eq!(tree.predict(&[3.0, 0.0]), 0.0);
        assert_eq!(tree.predict(&[12.0, 0.0]), 1.0);
    }

    #[test]
    fn fully_grown_tree_fits_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let data = BinnedMatrix::from_rows(&refs);
        let params = GiniParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: 2,
        };
        let tree = grow_gini_tree(&data, &y, &[1; 200], &params, &mut rng);
        for (row, &label) in rows.iter().zip(&y) {
            assert_eq!(tree.predict(row), label as f64);
        }
    }
}
