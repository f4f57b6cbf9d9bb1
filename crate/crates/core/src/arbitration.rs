//! Fusion of the database verdict with the classifier probability, the
//! human review queue for escalated answers, and folding confirmed labels
//! back into the training data.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{LabeledDataset, LabeledRow};
use crate::features::FeatureVector;
use crate::judge::{AnswerJudgement, Category, Outcome};
use crate::trace::Label;

#[derive(Debug, Error)]
pub enum ArbitrationError {
    #[error("classifier probability {0} outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
    #[error("not escalated")]
    NotEscalated,
    #[error("unknown review item {0}")]
    UnknownItem(String),
    #[error("review item {0} already resolved")]
    AlreadyResolved(String),
    #[error("no feature vector for answer {0}")]
    MissingFeatures(String),
    #[error("feature vector for {answer_id} has schema {found}, dataset has {expected}")]
    SchemaMismatch {
        answer_id: String,
        found: String,
        expected: String,
    },
    #[error("corrupt review log {path} line {line}: {message}")]
    CorruptLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ArbitrationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalStatus {
    Confirmed,
    FlaggedHallucination,
    EscalatedContaminationSuspect,
    EscalatedLogicSuspect,
    ClassifierAdjudicated,
}

impl FinalStatus {
    pub fn escalates(self) -> bool {
        matches!(
            self,
            Self::EscalatedContaminationSuspect
                | Self::EscalatedLogicSuspect
                | Self::ClassifierAdjudicated
        )
    }
}

/// Machine-readable follow-up for a confirmed hallucination; downstream
/// tools decide whether to act on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegenerateInstruction {
    pub action: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationOutcome {
    pub final_status: FinalStatus,
    pub escalate: bool,
    pub clf_probability: f64,
    pub clf_label: Label,
    pub threshold: f64,
    pub db_category: Category,
    pub note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regenerate: Option<RegenerateInstruction>,
    /// The context document contradicts itself and needs repair.
    #[serde(default)]
    pub repair_context: bool,
}

/// Combines a database verdict with a classifier probability.
/// `clf_prob >= threshold` reads as hallucination.
pub fn arbitrate(db: Category, clf_prob: f64, threshold: f64) -> Result<ArbitrationOutcome> {
    if !(0.0..=1.0).contains(&clf_prob) {
        return Err(ArbitrationError::ProbabilityRange(clf_prob));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ArbitrationError::ThresholdRange(threshold));
    }
    let clf_label = if clf_prob >= threshold {
        Label::Hallucination
    } else {
        Label::Fact
    };
    let (status, note) = match (db, clf_label) {
        (Category::Fact, Label::Fact) => (
            FinalStatus::Confirmed,
            "database and classifier agree: factual",
        ),
        (Category::Hallucination, Label::Hallucination) => (
            FinalStatus::FlaggedHallucination,
            "database and classifier agree: hallucination",
        ),
        (Category::Hallucination, Label::Fact) => (
            FinalStatus::EscalatedContaminationSuspect,
            "contradicted by the database but statistically factual: possible contamination",
        ),
        (Category::Fact, Label::Hallucination) => (
            FinalStatus::EscalatedLogicSuspect,
            "supported by the database but statistically hallucinated: possible logic error",
        ),
        (Category::CoverageGap, _) => (
            FinalStatus::ClassifierAdjudicated,
            "database has no coverage: classifier verdict used",
        ),
        (Category::JudgmentError, _) => (
            FinalStatus::ClassifierAdjudicated,
            "database is internally inconsistent: classifier verdict used, context flagged for repair",
        ),
    };
    let regenerate = (status == FinalStatus::FlaggedHallucination).then(|| RegenerateInstruction {
        action: "regenerate_with_verified_context".into(),
        reason: "answer contradicted by the trusted database".into(),
    });
    Ok(ArbitrationOutcome {
        final_status: status,
        escalate: status.escalates(),
        clf_probability: clf_prob,
        clf_label,
        threshold,
        db_category: db,
        note: note.to_string(),
        regenerate,
        repair_context: db == Category::JudgmentError,
    })
}

/// Answer-level database verdict from statement outcomes: any
/// hallucination wins, then judgment errors, then coverage gaps (provider
/// errors count as gaps); all-fact answers are facts. `None` for an answer
/// without statements.
pub fn answer_category(judgement: &AnswerJudgement) -> Option<Category> {
    let has = |o: Outcome| judgement.histogram.get(&o).copied().unwrap_or(0) > 0;
    if judgement.statements.is_empty() {
        None
    } else if has(Outcome::Hallucination) {
        Some(Category::Hallucination)
    } else if has(Outcome::JudgmentError) {
        Some(Category::JudgmentError)
    } else if has(Outcome::CoverageGap) || has(Outcome::Error) {
        Some(Category::CoverageGap)
    } else {
        Some(Category::Fact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanLabel {
    Fact,
    Hallucination,
    Confusion,
    Confabulation,
    Contamination,
}

impl HumanLabel {
    pub fn training_label(self) -> Label {
        match self {
            Self::Fact => Label::Fact,
            _ => Label::Hallucination,
        }
    }
}

impl std::str::FromStr for HumanLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fact" => Ok(Self::Fact),
            "hallucination" => Ok(Self::Hallucination),
            "confusion" => Ok(Self::Confusion),
            "confabulation" => Ok(Self::Confabulation),
            "contamination" => Ok(Self::Contamination),
            other => Err(format!("unknown label {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub answer_id: String,
    pub outcome: ArbitrationOutcome,
    /// `None` while pending.
    pub human_label: Option<HumanLabel>,
    pub enqueued_at: DateTime<Utc>,
    pub resolved_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub item_id: String,
    pub answer_id: String,
    pub human_label: HumanLabel,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogRecord {
    Enqueue {
        item_id: String,
        answer_id: String,
        outcome: ArbitrationOutcome,
        #[serde(with = "ts")]
        timestamp: DateTime<Utc>,
    },
    Resolve {
        item_id: String,
        human_label: HumanLabel,
        #[serde(with = "ts")]
        timestamp: DateTime<Utc>,
    },
}

mod ts {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Micros, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

fn truncate_micros(t: DateTime<Utc>) -> DateTime<Utc> {
    let s = t.to_rfc3339_opts(SecondsFormat::Micros, true);
    DateTime::parse_from_rfc3339(&s)
        .map(|t| t.with_timezone(&Utc))
        .unwrap_or(t)
}

/// Deterministic item id derived from the answer id.
pub fn review_item_id(answer_id: &str) -> String {
    let digest = Sha256::digest(answer_id.as_bytes());
    format!("rev-{}", &hex::encode(digest)[..12])
}

/// Append-only review log with an in-memory index, rebuilt on open.
#[derive(Debug)]
pub struct ReviewQueue {
    path: PathBuf,
    file: File,
    items: BTreeMap<String, ReviewItem>,
    order: Vec<String>,
}

impl ReviewQueue {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let io = |source| ArbitrationError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        let mut queue = Self {
            path: path.clone(),
            file,
            items: BTreeMap::new(),
            order: Vec::new(),
        };
        let reader = BufReader::new(File::open(&path).map_err(io)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| ArbitrationError::CorruptLog {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let record: LogRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            queue.apply(record).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(queue)
    }

    fn apply(&mut self, record: LogRecord) -> Result<()> {
        match record {
            LogRecord::Enqueue {
                item_id,
                answer_id,
                outcome,
                timestamp,
            } => {
                if !self.items.contains_key(&item_id) {
                    self.order.push(item_id.clone());
                    self.items.insert(
                        item_id.clone(),
                        ReviewItem {
                            item_id,
                            answer_id,
                            outcome,
                            human_label: None,
                            enqueued_at: timestamp,
                            resolved_at: None,
                        },
                    );
                }
            }
            LogRecord::Resolve {
                item_id,
                human_label,
                timestamp,
            } => {
                let item = self
                    .items
                    .get_mut(&item_id)
                    .ok_or_else(|| ArbitrationError::UnknownItem(item_id.clone()))?;
                if item.human_label.is_some() {
                    return Err(ArbitrationError::AlreadyResolved(item_id));
                }
                item.human_label = Some(human_label);
                item.resolved_at = Some(timestamp);
            }
        }
        Ok(())
    }

    fn append(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("log record serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|source| ArbitrationError::Io {
                path: self.path.display().to_string(),
                source,
            })
    }

    pub fn enqueue(&mut self, answer_id: &str, outcome: &ArbitrationOutcome) -> Result<ReviewItem> {
        self.enqueue_at(answer_id, outcome, Utc::now())
    }

    /// Adds an escalated outcome; returns the existing item if `answer_id`
    /// is already queued.
    pub fn enqueue_at(
        &mut self,
        answer_id: &str,
        outcome: &ArbitrationOutcome,
        timestamp: DateTime<Utc>,
    ) -> Result<ReviewItem> {
        if !outcome.escalate {
            return Err(ArbitrationError::NotEscalated);
        }
        let item_id = review_item_id(answer_id);
        if let Some(item) = self.items.get(&item_id) {
            return Ok(item.clone());
        }
        let record = LogRecord::Enqueue {
            item_id: item_id.clone(),
            answer_id: answer_id.to_string(),
            outcome: outcome.clone(),
            timestamp: truncate_micros(timestamp),
        };
        self.append(&record)?;
        self.apply(record)?;
        Ok(self.items[&item_id].clone())
    }

    pub fn resolve(&mut self, item_id: &str, label: HumanLabel) -> Result<FeedbackRecord> {
        self.resolve_at(item_id, label, Utc::now())
    }

    pub fn resolve_at(
        &mut self,
        item_id: &str,
        label: HumanLabel,
        timestamp: DateTime<Utc>,
    ) -> Result<FeedbackRecord> {
        let item = self
            .items
            .get(item_id)
            .ok_or_else(|| ArbitrationError::UnknownItem(item_id.to_string()))?;
        if item.human_label.is_some() {
            return Err(ArbitrationError::AlreadyResolved(item_id.to_string()));
        }
        let answer_id = item.answer_id.clone();
        let timestamp = truncate_micros(timestamp);
        let record = LogRecord::Resolve {
            item_id: item_id.to_string(),
            human_label: label,
            timestamp,
        };
        self.append(&record)?;
        self.apply(record)?;
        Ok(FeedbackRecord {
            item_id: item_id.to_string(),
            answer_id,
            human_label: label,
            timestamp,
        })
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.items.get(item_id)
    }

    /// Items in enqueue order.
    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.order.iter().map(|id| &self.items[id])
    }

    pub fn pending(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items().filter(|i| i.human_label.is_none())
    }

    pub fn feedback(&self) -> Vec<FeedbackRecord> {
        self.items()
            .filter_map(|i| {
                Some(FeedbackRecord {
                    item_id: i.item_id.clone(),
                    answer_id: i.answer_id.clone(),
                    human_label: i.human_label?,
                    timestamp: i.resolved_at?,
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub const FEEDBACK_PROVENANCE: &str = "human_feedback";

/// Appends one `human_feedback` row per resolved item not yet merged.
/// Returns the number of rows added.
pub fn merge_feedback(
    feedback: &[FeedbackRecord],
    vectors: &BTreeMap<String, FeatureVector>,
    dataset: &mut LabeledDataset,
) -> Result<usize> {
    let mut added = 0;
    for record in feedback {
        let merged = dataset.rows.iter().any(|r| {
            r.answer_id == record.answer_id && r.provenance.as_deref() == Some(FEEDBACK_PROVENANCE)
        });
        if merged {
            continue;
        }
        let v = vectors
            .get(&record.answer_id)
            .ok_or_else(|| ArbitrationError::MissingFeatures(record.answer_id.clone()))?;
        if v.schema_id != dataset.schema_id {
            return Err(ArbitrationError::SchemaMismatch {
                answer_id: record.answer_id.clone(),
                found: v.schema_id.clone(),
                expected: dataset.schema_id.clone(),
            });
        }
        dataset.rows.push(LabeledRow {
            answer_id: record.answer_id.clone(),
            values: v.values.clone(),
            label: record.human_label.training_label(),
            provenance: Some(FEEDBACK_PROVENANCE.to_string()),
        });
        added += 1;
    }
    Ok(added)
}
