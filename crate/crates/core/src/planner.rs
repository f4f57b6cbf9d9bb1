//! Ranking by hallucination probability, accuracy per percentile bin, and
//! selective-intervention plans for the highest-risk items.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no items")]
    Empty,
    #[error("{items} items cannot fill {bins} bins")]
    TooFewItems { items: usize, bins: usize },
    #[error("bin count must be ≥ 1")]
    ZeroBins,
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("item {0} has probability outside [0, 1]")]
    Probability(String),
    #[error("item {0} has no correctness flag")]
    MissingCorrectness(String),
    #[error("majority vote needs at least one answer")]
    NoAnswers,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("malformed plan file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub hallucination_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

impl RankedItem {
    pub fn new(id: impl Into<String>, p: f64) -> Self {
        Self {
            id: id.into(),
            hallucination_probability: p,
            correct: None,
            candidates: Vec::new(),
        }
    }

    pub fn with_correct(mut self, correct: bool) -> Self {
        self.correct = Some(correct);
        self
    }
}

fn validate(items: &[RankedItem]) -> Result<()> {
    if items.is_empty() {
        return Err(PlanError::Empty);
    }
    match items
        .iter()
        .find(|i| !(0.0..=1.0).contains(&i.hallucination_probability))
    {
        Some(bad) => Err(PlanError::Probability(bad.id.clone())),
        None => Ok(()),
    }
}

fn ascending(a: &RankedItem, b: &RankedItem) -> Ordering {
    a.hallucination_probability
        .total_cmp(&b.hallucination_probability)
        .then_with(|| a.id.cmp(&b.id))
}

/// Bin index per item (input order). Items sorted by (probability, id)
/// ascending; sorted position `r` lands in the bin `b` with
/// `floor(N·b/B) <= r < floor(N·(b+1)/B)`.
pub fn percentile_bins(items: &[RankedItem], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(PlanError::ZeroBins);
    }
    validate(items)?;
    let n = items.len();
    if n < bins {
        return Err(PlanError::TooFewItems { items: n, bins });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ascending(&items[a], &items[b]));
    let mut out = vec![0; n];
    let mut b = 0;
    for (r, &idx) in order.iter().enumerate() {
        while r >= n * (b + 1) / bins {
            b += 1;
        }
        out[idx] = b;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub bin: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_probability: f64,
}

pub fn accuracy_by_bin(items: &[RankedItem], bins: usize) -> Result<Vec<BinAccuracy>> {
    if let Some(bad) = items.iter().find(|i| i.correct.is_none()) {
        return Err(PlanError::MissingCorrectness(bad.id.clone()));
    }
    let assignment = percentile_bins(items, bins)?;
    let mut rows: Vec<BinAccuracy> = (0..bins)
        .map(|bin| BinAccuracy {
            bin,
            count: 0,
            correct: 0,
            accuracy: 0.0,
            mean_probability: 0.0,
        })
        .collect();
    for (item, &b) in items.iter().zip(&assignment) {
        let row = &mut rows[b];
        row.count += 1;
        row.correct += usize::from(item.correct == Some(true));
        row.mean_probability += item.hallucination_probability;
    }
    for row in &mut rows {
        row.accuracy = row.correct as f64 / row.count as f64;
        row.mean_probability /= row.count as f64;
    }
    Ok(rows)
}

pub fn write_bin_csv(rows: &[BinAccuracy], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "bin,count,correct,accuracy,mean_probability")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.bin, r.count, r.correct, r.accuracy, r.mean_probability
        )?;
    }
    Ok(())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(PlanError::Fraction(fraction))
    }
}

/// Number of items selected for a fraction: `ceil(fraction·N)`, with a
/// 1e-9 allowance so that e.g. 0.4·10 stays 4.
pub fn selection_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Ids of the `ceil(fraction·N)` highest-probability items, highest first,
/// ties by id ascending.
pub fn select_top_fraction(items: &[RankedItem], fraction: f64) -> Result<Vec<String>> {
    check_fraction(fraction)?;
    validate(items)?;
    let mut sorted: Vec<&RankedItem> = items.iter().collect();
    sorted.sort_by(|a, b| {
        b.hallucination_probability
            .total_cmp(&a.hallucination_probability)
            .then_with(|| a.id.cmp(&b.id))
    });
    let k = selection_size(items.len(), fraction);
    Ok(sorted.into_iter().take(k).map(|i| i.id.clone()).collect())
}

/// Most frequent answer; ties go to the answer seen first.
pub fn majority_vote(answers: &[String]) -> Result<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, a) in answers.iter().enumerate() {
        counts.entry(a.as_str()).or_insert((0, i)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(a, _)| a.to_string())
        .ok_or(PlanError::NoAnswers)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    MajorityVote { samples: usize },
    HumanReview,
    WebVerify,
    Accept,
}

impl Action {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::MajorityVote { samples: 0 } => Err(PlanError::InvalidAction(
                "majority vote needs ≥ 1 sample".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub id: String,
    pub hallucination_probability: f64,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub threshold_fraction: f64,
    pub action: Action,
    /// Selected ids, highest probability first.
    pub selected: Vec<String>,
    /// Every item in descending-probability order with its action.
    pub entries: Vec<PlanEntry>,
    #[serde(default)]
    pub provenance: Provenance,
}

pub fn build_plan(
    items: &[RankedItem],
    fraction: f64,
    action: Action,
    provenance: Provenance,
) -> Result<InterventionPlan> {
    action.validate()?;
    let selected = select_top_fraction(items, fraction)?;
    let by_id: HashMap<&str, &RankedItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut rest: Vec<&RankedItem> = items.iter().collect();
    rest.sort_by(|a, b| {
        b.hallucination_probability
            .total_cmp(&a.hallucination_probability)
            .then_with(|| a.id.cmp(&b.id))
    });
    let chosen: std::collections::HashSet<&str> = selected.iter().map(String::as_str).collect();
    let mut entries: Vec<PlanEntry> = selected
        .iter()
        .map(|id| PlanEntry {
            id: id.clone(),
            hallucination_probability: by_id[id.as_str()].hallucination_probability,
            action: action.clone(),
        })
        .collect();
    entries.extend(
        rest.into_iter()
            .filter(|i| !chosen.contains(i.id.as_str()))
            .map(|i| PlanEntry {
                id: i.id.clone(),
                hallucination_probability: i.hallucination_probability,
                action: Action::Accept,
            }),
    );
    Ok(InterventionPlan {
        threshold_fraction: fraction,
        action,
        selected,
        entries,
        provenance,
    })
}

pub fn write_plan(plan: &InterventionPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = serde_json::to_vec_pretty(plan).expect("plan serializes");
    body.push(b'\n');
    fs::write(path, body).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<InterventionPlan> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PlanError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(ps: &[f64]) -> Vec<RankedItem> {
        ps.iter()
            .enumerate()
            .map(|(i, &p)| RankedItem::new(format!("q{i:02}"), p))
            .collect()
    }

    #[test]
    fn seven_items_two_bins() {
        // floor(7·1/2) = 3: sorted positions 0..3 in bin 0, 3..7 in bin 1
        let it = items(&[0.7, 0.1, 0.6, 0.2, 0.5, 0.3, 0.4]);
        let bins = percentile_bins(&it, 2).unwrap();
        assert_eq!(bins, vec![1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn ceiling_rule() {
        let it = items(&[0.1, 0.9, 0.5]);
        assert_eq!(select_top_fraction(&it, 0.4).unwrap(), vec!["q01", "q02"]);
        let ten = items(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!(
            select_top_fraction(&ten, 0.4).unwrap(),
            vec!["q09", "q08", "q07", "q06"]
        );
        assert!(select_top_fraction(&ten, 0.0).is_err());
    }

    #[test]
    fn votes() {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(majority_vote(&v(&["A", "B", "A"])).unwrap(), "A");
        assert_eq!(majority_vote(&v(&["A", "B"])).unwrap(), "A");
        assert_eq!(majority_vote(&v(&["B", "A", "A", "B"])).unwrap(), "B");
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn plan_shape() {
        let it: Vec<RankedItem> = (0..100)
            .map(|i| RankedItem::new(format!("a{i:03}"), i as f64 / 100.0))
            .collect();
        let plan = build_plan(
            &it,
            0.4,
            Action::MajorityVote { samples: 12 },
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(plan.selected.len(), 40);
        let accept = plan
            .entries
            .iter()
            .filter(|e| e.action == Action::Accept)
            .count();
        assert_eq!(accept, 60);
        assert_eq!(plan.entries[0].id, "a099");
    }
}
