//! ROC/AUC, confusion matrices and classification reports.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::stacking::{predict_dataset, TrainedModel};
use super::{ClassifierError, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks in O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(ClassifierError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ClassifierError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie block i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid * pos_in_block as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points for thresholds at every distinct score, descending, starting
/// from (0, 0) at threshold +inf.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(ClassifierError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(ClassifierError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp / n_neg,
            tpr: tp / n_pos,
            threshold: s,
        });
    }
    Ok(points)
}

pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([
            p.fpr.to_string(),
            p.tpr.to_string(),
            p.threshold.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    /// Index 0 = fact, 1 = hallucination.
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 2]; 2],
    /// One-vs-rest AUC per class (fact scored by 1 − p).
    pub auc: Vec<(String, f64)>,
    pub roc: Vec<RocPoint>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Report for hallucination probabilities `scores` against `labels`; a score
/// ≥ `threshold` predicts hallucination.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if scores.len() != labels.len() {
        return Err(ClassifierError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = usize::from(s >= threshold);
        confusion[y as usize][pred] += 1;
    }
    let n = scores.len();
    let mut classes = Vec::with_capacity(2);
    for c in 0..2 {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let support = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassMetrics {
            label: if c == 0 { "fact" } else { "hallucination" }.into(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let avg = |weights: [f64; 2]| AverageMetrics {
        precision: classes
            .iter()
            .zip(weights)
            .map(|(c, w)| c.precision * w)
            .sum(),
        recall: classes.iter().zip(weights).map(|(c, w)| c.recall * w).sum(),
        f1: classes.iter().zip(weights).map(|(c, w)| c.f1 * w).sum(),
    };
    let macro_avg = avg([0.5, 0.5]);
    let weighted_avg = avg([
        classes[0].support as f64 / n as f64,
        classes[1].support as f64 / n as f64,
    ]);
    let hall_auc = auc(scores, labels)?;
    let inverted: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let fact_labels: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
    let fact_auc = auc(&inverted, &fact_labels)?;
    Ok(EvalReport {
        n,
        threshold,
        accuracy: ratio(confusion[0][0] + confusion[1][1], n),
        classes,
        macro_avg,
        weighted_avg,
        confusion,
        auc: vec![
            ("fact".into(), fact_auc),
            ("hallucination".into(), hall_auc),
        ],
        roc: roc_curve(scores, labels)?,
    })
}

pub fn evaluate(model: &TrainedModel, test: &LabeledDataset, threshold: f64) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    test.require_both_classes()?;
    let scores = predict_dataset(model, test)?;
    evaluate_scores(&scores, &test.labels(), threshold)
}

impl EvalReport {
    pub fn hallucination_auc(&self) -> f64 {
        self.auc
            .iter()
            .find(|(l, _)| l == "hallucination")
            .map_or(f64::NAN, |x| x.1)
    }

    /// Aligned plain-text table in the usual classification-report layout.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>15} {:>10} {:>10} {:>10} {:>10}",
            "", "precision", "recall", "f1-score", "support"
        );
        let _ = writeln!(s);
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:>15} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>15} {:>10} {:>10} {:>10.2} {:>10}",
            "accuracy", "", "", self.accuracy, self.n
        );
        for (name, a) in [
            ("macro avg", &self.macro_avg),
            ("weighted avg", &self.weighted_avg),
        ] {
            let _ = writeln!(
                s,
                "{:>15} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                name, a.precision, a.recall, a.f1, self.n
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "confusion (rows=true, cols=pred): [[{}, {}], [{}, {}]]",
            self.confusion[0][0], self.confusion[0][1], self.confusion[1][0], self.confusion[1][1]
        );
        let _ = writeln!(s, "AUC (hallucination): {:.4}", self.hallucination_auc());
        s
    }
}

/// Mean drop in held-out AUC when one feature column is shuffled.
pub fn permutation_importance(
    model: &TrainedModel,
    data: &LabeledDataset,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let labels = data.labels();
    let baseline = auc(&predict_dataset(model, data)?, &labels)?;
    let d = data.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut importances = Vec::with_capacity(d);
    for f in 0..d {
        let mut drop = 0.0;
        for _ in 0..repeats.max(1) {
            let mut column: Vec<f64> = data.rows.iter().map(|r| r.values[f]).collect();
            column.shuffle(&mut rng);
            let mut shuffled = data.clone();
            for (row, v) in shuffled.rows.iter_mut().zip(column) {
                row.values[f] = v;
            }
            drop += baseline - auc(&predict_dataset(model, &shuffled)?, &labels)?;
        }
        importances.push(drop / repeats.max(1) as f64);
    }
    Ok(importances)
}
