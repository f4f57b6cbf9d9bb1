//! Two-dimensional projections of the feature space via the eigenvectors of
//! the sample covariance matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::{ClassifierError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// One row of component scores per input row.
    pub coordinates: Vec<Vec<f64>>,
    /// Descending; each in [0, 1].
    pub explained_variance_ratio: Vec<f64>,
    /// Unit-length loading vectors, one per component.
    pub components: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

pub fn pca_projection(data: &LabeledDataset, components: usize) -> Result<PcaResult> {
    let rows: Vec<&[f64]> = data.matrix();
    pca_rows(&rows, components)
}

pub fn pca_rows(rows: &[&[f64]], components: usize) -> Result<PcaResult> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n < 3 || d < 2 {
        return Err(ClassifierError::InvalidConfig(format!(
            "PCA needs ≥ 3 rows and ≥ 2 columns (got {n}×{d})"
        )));
    }
    if components == 0 || components > d {
        return Err(ClassifierError::InvalidConfig(format!(
            "cannot extract {components} components from {d} columns"
        )));
    }
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        for (i, r) in rows.iter().enumerate() {
            centered[(i, j)] = r[j] - mean;
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    let mut warnings = Vec::new();
    if total <= 1e-300 {
        warnings.push("zero-variance data: explained ratios set to 0".to_string());
        return Ok(PcaResult {
            coordinates: vec![vec![0.0; components]; n],
            explained_variance_ratio: vec![0.0; components],
            components: (0..components)
                .map(|c| (0..d).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
                .collect(),
            warnings,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut loadings = Vec::with_capacity(components);
    let mut ratios = Vec::with_capacity(components);
    for &idx in order.iter().take(components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // sign convention: largest-magnitude loading positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        ratios.push((eig.eigenvalues[idx].max(0.0) / total).clamp(0.0, 1.0));
        loadings.push(v);
    }
    let coordinates = (0..n)
        .map(|i| {
            loadings
                .iter()
                .map(|v| (0..d).map(|j| centered[(i, j)] * v[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        coordinates,
        explained_variance_ratio: ratios,
        components: loadings,
        warnings,
    })
}
