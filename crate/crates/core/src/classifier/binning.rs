//! Per-feature quantile binning shared by the tree learners.
//!
//! Split search runs over at most [`MAX_BINS`] candidate cut points per
//! feature. Cut points sit halfway between adjacent observed values, so a
//! split "bin ≤ b" is stored as the real threshold "x ≤ cuts[b]" and trees
//! predict on raw feature values.

pub const MAX_BINS: usize = 256;

#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub n_rows: usize,
    pub n_features: usize,
    /// Column-major: `bins[f * n_rows + r]`.
    pub bins: Vec<u8>,
    pub cuts: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map_or(0, |r| r.len());
        let mut bins = vec![0u8; n_rows * n_features];
        let mut cuts = Vec::with_capacity(n_features);
        let mut column = vec![0.0; n_rows];
        for f in 0..n_features {
            for (r, row) in rows.iter().enumerate() {
                column[r] = row[f];
            }
            let c = cut_points(&column);
            let out = &mut bins[f * n_rows..(f + 1) * n_rows];
            for (r, &x) in column.iter().enumerate() {
                out[r] = bin_of(&c, x) as u8;
            }
            cuts.push(c);
        }
        Self {
            n_rows,
            n_features,
            bins,
            cuts,
        }
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }

    #[inline]
    pub fn n_bins(&self, f: usize) -> usize {
        self.cuts[f].len() + 1
    }
}

#[inline]
pub fn bin_of(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c < x)
}

fn cut_points(column: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = column.iter().copied().filter(|x| !x.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= 1 {
        return Vec::new();
    }
    if distinct.len() <= MAX_BINS {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts = Vec::with_capacity(MAX_BINS - 1);
    for j in 1..MAX_BINS {
        let pos = j * n / MAX_BINS;
        let q = sorted[pos];
        // largest value strictly below q
        let first = sorted.partition_point(|&x| x < q);
        if first == 0 {
            continue;
        }
        let cut = midpoint(sorted[first - 1], q);
        if cuts.last().is_none_or(|&last| cut > last) {
            cuts.push(cut);
        }
    }
    cuts
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // guard against rounding onto the upper value
    if m >= b {
        a
    } else {
        m
    }
}
