//! Information-theoretic feature extraction.
//!
//! Each model trace yields a token-by-feature matrix (entropy, rank,
//! generated log-probability and the top-k probabilities). Each ordered pair
//! of models yields a series of per-step KL divergences. Every column and
//! series is then reduced to five standardized moments, giving a fixed-length
//! [`FeatureVector`] whose layout is pinned by a [`FeatureSchema`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{align_pair, AlignStrategy, EnsembleTrace, Label, ModelTrace, TopCandidate};

/// Default probability floor for tokens missing from one side of a KL pair.
pub const DEFAULT_KL_EPSILON: f64 = 1e-10;

/// Variance below which higher standardized moments are reported as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

pub const MOMENT_NAMES: [&str; 5] = ["mean", "var", "skew", "kurt", "hskew"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("invalid probability {0} after exponentiation")]
    InvalidProbability(f64),
    #[error("candidate mass {0} exceeds 1")]
    ExcessMass(f64),
    #[error("epsilon must be > 0 (got {0})")]
    InvalidEpsilon(f64),
    #[error("empty series")]
    EmptySeries,
    #[error("duplicate model_id {0} in schema")]
    DuplicateModel(String),
    #[error("schema/model mismatch: {0}")]
    SchemaMismatch(String),
    #[error("need at least two traces for interaction features (got {0})")]
    TooFewTraces(usize),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// What to do with probability mass not covered by the top-k candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// The uncovered mass counts as one extra pseudo-token.
    #[default]
    Bucket,
    /// Candidates are rescaled to sum to one.
    Renormalize,
}

fn checked_probs(top: &[TopCandidate]) -> Result<Vec<f64>> {
    if top.is_empty() {
        return Err(FeatureError::EmptyCandidates);
    }
    let probs: Vec<f64> = top.iter().map(TopCandidate::prob).collect();
    for &p in &probs {
        if !(0.0..=1.0 + crate::trace::MASS_TOLERANCE).contains(&p) {
            return Err(FeatureError::InvalidProbability(p));
        }
    }
    let mass: f64 = probs.iter().sum();
    if mass > 1.0 + crate::trace::MASS_TOLERANCE {
        return Err(FeatureError::ExcessMass(mass));
    }
    Ok(probs)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in nats of one step's candidate distribution.
pub fn token_entropy(top: &[TopCandidate], residual: ResidualMode) -> Result<f64> {
    let probs = checked_probs(top)?;
    let mass: f64 = probs.iter().sum();
    let h = match residual {
        ResidualMode::Bucket => {
            let rest = (1.0 - mass).max(0.0);
            -(probs.iter().map(|&p| plogp(p)).sum::<f64>() + plogp(rest))
        }
        ResidualMode::Renormalize => {
            if mass <= 0.0 {
                return Err(FeatureError::InvalidProbability(mass));
            }
            -probs.iter().map(|&p| plogp(p / mass)).sum::<f64>()
        }
    };
    Ok(h.max(0.0))
}

/// KL(P‖Q) in nats over the union of both candidate sets. Tokens absent from
/// one side are floored at `epsilon`; both sides are then renormalized.
pub fn pairwise_kl(p: &[TopCandidate], q: &[TopCandidate], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(FeatureError::InvalidEpsilon(epsilon));
    }
    if p.is_empty() || q.is_empty() {
        return Err(FeatureError::EmptyCandidates);
    }
    let mut a: Vec<(u64, f64)> = p.iter().map(|c| (c.token_id, c.prob())).collect();
    let mut b: Vec<(u64, f64)> = q.iter().map(|c| (c.token_id, c.prob())).collect();
    a.sort_unstable_by_key(|x| x.0);
    b.sort_unstable_by_key(|x| x.0);

    // Merge into aligned (P, Q) pairs over the union support.
    let mut pairs = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                i += 1;
                j += 1;
                (x.1, y.1)
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                i += 1;
                (x.1, epsilon)
            }
            (Some(x), None) => {
                i += 1;
                (x.1, epsilon)
            }
            (_, Some(y)) => {
                j += 1;
                (epsilon, y.1)
            }
            (None, None) => unreachable!(),
        };
        pairs.push((next.0.max(epsilon), next.1.max(epsilon)));
    }
    let zp: f64 = pairs.iter().map(|x| x.0).sum();
    let zq: f64 = pairs.iter().map(|x| x.1).sum();
    let kl: f64 = pairs
        .iter()
        .map(|&(pp, qq)| {
            let pn = pp / zp;
            pn * (pn / (qq / zq)).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Per-step independent features of one model trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatureMatrix {
    pub model_id: String,
    pub k: usize,
    pub entropy: Vec<f64>,
    pub rank: Vec<f64>,
    pub generated_logprob: Vec<f64>,
    /// `p_top[i][t]` is the probability of the (i+1)-th candidate at step t.
    pub p_top: Vec<Vec<f64>>,
}

impl TokenFeatureMatrix {
    pub fn rows(&self) -> usize {
        self.entropy.len()
    }

    /// Row `t` as `[entropy, rank, logprob, p_top_1, .., p_top_k]`.
    pub fn row(&self, t: usize) -> Vec<f64> {
        let mut row = vec![self.entropy[t], self.rank[t], self.generated_logprob[t]];
        row.extend(self.p_top.iter().map(|col| col[t]));
        row
    }

    fn columns(&self) -> impl Iterator<Item = &[f64]> {
        [
            self.entropy.as_slice(),
            self.rank.as_slice(),
            self.generated_logprob.as_slice(),
        ]
        .into_iter()
        .chain(self.p_top.iter().map(Vec::as_slice))
    }
}

pub fn token_features(trace: &ModelTrace, residual: ResidualMode) -> Result<TokenFeatureMatrix> {
    token_features_k(trace, trace.k(), residual)
}

/// Like [`token_features`] with `k` probability columns, padding with zeros
/// or truncating as needed.
pub fn token_features_k(
    trace: &ModelTrace,
    k: usize,
    residual: ResidualMode,
) -> Result<TokenFeatureMatrix> {
    let n = trace.len();
    let mut m = TokenFeatureMatrix {
        model_id: trace.model_id().to_string(),
        k,
        entropy: Vec::with_capacity(n),
        rank: Vec::with_capacity(n),
        generated_logprob: Vec::with_capacity(n),
        p_top: vec![vec![0.0; n]; k],
    };
    for (t, step) in trace.steps().iter().enumerate() {
        m.entropy.push(token_entropy(step.top(), residual)?);
        m.rank.push(step.rank() as f64);
        m.generated_logprob.push(step.generated_logprob());
        for (i, c) in step.top().iter().take(k).enumerate() {
            m.p_top[i][t] = c.prob();
        }
    }
    Ok(m)
}

/// Per-step KL divergences for one ordered model pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KlSeries {
    pub pair: (String, String),
    pub values: Vec<f64>,
}

pub fn kl_series(
    p: &ModelTrace,
    q: &ModelTrace,
    strategy: AlignStrategy,
    epsilon: f64,
) -> Result<KlSeries> {
    let pairs = align_pair(p, q, strategy)?;
    let values = pairs
        .into_iter()
        .map(|(i, j)| pairwise_kl(p.steps()[i].top(), q.steps()[j].top(), epsilon))
        .collect::<Result<Vec<_>>>()?;
    Ok(KlSeries {
        pair: (p.model_id().to_string(), q.model_id().to_string()),
        values,
    })
}

/// All ordered model pairs of one ensemble, in (p, q) order of model id.
pub fn ordered_pairs(model_ids: &[String]) -> Vec<(String, String)> {
    let mut ids = model_ids.to_vec();
    ids.sort();
    let mut pairs = Vec::new();
    for p in &ids {
        for q in &ids {
            if p != q {
                pairs.push((p.clone(), q.clone()));
            }
        }
    }
    pairs
}

/// One KL series per ordered pair of models (both directions).
pub fn interaction_features(
    trace: &EnsembleTrace,
    strategy: AlignStrategy,
    epsilon: f64,
) -> Result<Vec<KlSeries>> {
    let models = trace.model_traces();
    if models.len() < 2 {
        return Err(FeatureError::TooFewTraces(models.len()));
    }
    let ids: Vec<String> = models.iter().map(|m| m.model_id().to_string()).collect();
    ordered_pairs(&ids)
        .into_iter()
        .map(|(p, q)| {
            let (mp, mq) = (trace.model(&p).unwrap(), trace.model(&q).unwrap());
            kl_series(mp, mq, strategy, epsilon)
        })
        .collect()
}

/// KL series between rephrasing variants of one question for a single model.
/// Pairs are labelled with the variant ids.
pub fn variant_interaction_features(
    variants: &[EnsembleTrace],
    model_id: &str,
    strategy: AlignStrategy,
    epsilon: f64,
) -> Result<Vec<KlSeries>> {
    if variants.len() < 2 {
        return Err(FeatureError::TooFewTraces(variants.len()));
    }
    let mut by_variant: BTreeMap<&str, &ModelTrace> = BTreeMap::new();
    for v in variants {
        let m = v.model(model_id).ok_or_else(|| {
            FeatureError::SchemaMismatch(format!(
                "variant {} lacks model {model_id}",
                v.variant_id()
            ))
        })?;
        by_variant.insert(v.variant_id(), m);
    }
    let mut out = Vec::new();
    for (vp, mp) in &by_variant {
        for (vq, mq) in &by_variant {
            if vp != vq {
                let mut s = kl_series(mp, mq, strategy, epsilon)?;
                s.pair = (vp.to_string(), vq.to_string());
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Population mean, variance and standardized 3rd..5th central moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    pub kurt: f64,
    pub hskew: f64,
}

impl Moments {
    pub fn to_array(self) -> [f64; 5] {
        [self.mean, self.var, self.skew, self.kurt, self.hskew]
    }
}

/// Kurtosis is raw (not excess). Near-constant series report zero for the
/// standardized moments.
pub fn standardized_moments(series: &[f64]) -> Result<Moments> {
    if series.is_empty() {
        return Err(FeatureError::EmptySeries);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut m5) = (0.0, 0.0, 0.0, 0.0);
    for &x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        m5 += d2 * d2 * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    m5 /= n;
    if m2 < DEGENERATE_VARIANCE {
        return Ok(Moments {
            mean,
            var: m2,
            skew: 0.0,
            kurt: 0.0,
            hskew: 0.0,
        });
    }
    let sd = m2.sqrt();
    Ok(Moments {
        mean,
        var: m2,
        skew: m3 / (m2 * sd),
        kurt: m4 / (m2 * m2),
        hskew: m5 / (m2 * m2 * sd),
    })
}

/// Ordered feature layout shared by extraction, training and prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub model_ids: Vec<String>,
    pub k: usize,
    pub pairs: Vec<(String, String)>,
    pub names: Vec<String>,
}

pub fn base_feature_names(k: usize) -> Vec<String> {
    let mut bases = vec!["entropy".to_string(), "rank".into(), "logprob".into()];
    bases.extend((1..=k).map(|i| format!("p_top_{i}")));
    bases
}

/// Builds the deterministic feature layout: per model (sorted by id) every
/// base feature × five moments, then every pair in the given order × five
/// moments.
pub fn feature_schema(
    model_ids: &[String],
    k: usize,
    pairs: &[(String, String)],
) -> Result<FeatureSchema> {
    let mut sorted = model_ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(FeatureError::DuplicateModel(w[0].clone()));
    }
    let bases = base_feature_names(k);
    let mut names = Vec::with_capacity(sorted.len() * bases.len() * 5 + pairs.len() * 5);
    for model in &sorted {
        for base in &bases {
            for moment in MOMENT_NAMES {
                names.push(format!("{model}.{base}.{moment}"));
            }
        }
    }
    for (p, q) in pairs {
        for moment in MOMENT_NAMES {
            names.push(format!("kl.{p}->{q}.{moment}"));
        }
    }
    let schema_id = schema_hash(&names);
    Ok(FeatureSchema {
        schema_id,
        model_ids: sorted,
        k,
        pairs: pairs.to_vec(),
        names,
    })
}

/// Stable identifier of a feature name list.
pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..12])
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Recomputes the id from the names; false means the schema was edited.
    pub fn is_consistent(&self) -> bool {
        schema_hash(&self.names) == self.schema_id
    }
}

/// Per-pair alignment override.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub p: String,
    pub q: String,
    pub strategy: AlignStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub residual: ResidualMode,
    pub alignment: AlignStrategy,
    pub pair_alignment: Vec<PairAlignment>,
    pub epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            residual: ResidualMode::Bucket,
            alignment: AlignStrategy::Strict,
            pair_alignment: Vec::new(),
            epsilon: DEFAULT_KL_EPSILON,
        }
    }
}

impl FeatureConfig {
    pub fn strategy_for(&self, p: &str, q: &str) -> AlignStrategy {
        self.pair_alignment
            .iter()
            .find(|a| a.p == p && a.q == q)
            .map(|a| a.strategy)
            .unwrap_or(self.alignment)
    }
}

/// Schema-shaped numeric summary of one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub answer_id: String,
    pub schema_id: String,
    pub label: Option<Label>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

pub fn assemble_feature_vector(
    trace: &EnsembleTrace,
    schema: &FeatureSchema,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(schema.len());
    let mut warnings = Vec::new();
    for model_id in &schema.model_ids {
        let model = trace.model(model_id).ok_or_else(|| {
            FeatureError::SchemaMismatch(format!(
                "answer {} has no trace for model {model_id}",
                trace.answer_id()
            ))
        })?;
        let matrix = token_features_k(model, schema.k, config.residual)?;
        for column in matrix.columns() {
            let m = standardized_moments(column)?;
            values.extend(m.to_array().map(finite_or_zero));
        }
    }
    for (p, q) in &schema.pairs {
        let (mp, mq) = match (trace.model(p), trace.model(q)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(FeatureError::SchemaMismatch(format!(
                    "answer {} lacks pair {p}->{q}",
                    trace.answer_id()
                )))
            }
        };
        match kl_series(mp, mq, config.strategy_for(p, q), config.epsilon) {
            Ok(series) => {
                let m = standardized_moments(&series.values)?;
                values.extend(m.to_array().map(finite_or_zero));
            }
            Err(FeatureError::Trace(e)) => {
                warnings.push(format!("kl.{p}->{q}: {e}; filled with 0"));
                values.extend([0.0; 5]);
            }
            Err(e) => return Err(e),
        }
    }
    debug_assert_eq!(values.len(), schema.len());
    Ok(FeatureVector {
        answer_id: trace.answer_id().to_string(),
        schema_id: schema.schema_id.clone(),
        label: trace.label(),
        values,
        warnings,
    })
}

/// Schema covering every model of the first trace, its k, and all ordered pairs.
pub fn schema_for_corpus(traces: &[EnsembleTrace]) -> Result<FeatureSchema> {
    let first = traces
        .first()
        .ok_or_else(|| FeatureError::SchemaMismatch("empty corpus".into()))?;
    let ids: Vec<String> = first
        .model_traces()
        .iter()
        .map(|m| m.model_id().to_string())
        .collect();
    let k = first
        .model_traces()
        .iter()
        .map(ModelTrace::k)
        .max()
        .unwrap_or(0);
    feature_schema(&ids, k, &ordered_pairs(&ids))
}

/// Extracts one vector per trace, preserving input order.
pub fn extract_corpus(
    traces: &[EnsembleTrace],
    schema: &FeatureSchema,
    config: &FeatureConfig,
) -> Result<Vec<FeatureVector>> {
    traces
        .par_iter()
        .map(|t| assemble_feature_vector(t, schema, config))
        .collect()
}

pub fn write_feature_corpus(vectors: &[FeatureVector], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for v in vectors {
        serde_json::to_writer(&mut out, v).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_feature_corpus(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let io_err = |source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let v: FeatureVector =
            serde_json::from_str(&line).map_err(|e| FeatureError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(v);
    }
    Ok(out)
}

/// Schema plus extraction settings, stored next to a feature corpus so that
/// a trained model can rebuild vectors from raw traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub schema: FeatureSchema,
    pub config: FeatureConfig,
}

/// Sidecar location of the spec for a corpus: `<corpus>.spec.json`.
pub fn spec_path(corpus: impl AsRef<Path>) -> PathBuf {
    let mut name = corpus.as_ref().as_os_str().to_owned();
    name.push(".spec.json");
    PathBuf::from(name)
}

pub fn write_feature_spec(spec: &FeatureSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_vec_pretty(spec).expect("feature spec serializes");
    std::fs::write(path, body).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_feature_spec(path: impl AsRef<Path>) -> Result<FeatureSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: FeatureSpec = serde_json::from_str(&text).map_err(|e| FeatureError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if !spec.schema.is_consistent() {
        return Err(FeatureError::SchemaMismatch(format!(
            "spec {} is internally inconsistent",
            path.display()
        )));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cands(ps: &[f64]) -> Vec<TopCandidate> {
        ps.iter()
            .enumerate()
            .map(|(i, &p)| TopCandidate::new(i as u64, p.ln()))
            .collect()
    }

    #[test]
    fn entropy_examples() {
        let h = token_entropy(&cands(&[0.25; 4]), ResidualMode::Bucket).unwrap();
        assert_abs_diff_eq!(h, 4f64.ln(), epsilon = 1e-12);
        assert_eq!(
            token_entropy(&cands(&[1.0]), ResidualMode::Bucket).unwrap(),
            0.0
        );
        let h = token_entropy(&cands(&[0.5, 0.25, 0.25]), ResidualMode::Bucket).unwrap();
        assert_abs_diff_eq!(h, 1.039721, epsilon = 1e-6);
        let h = token_entropy(&cands(&[0.6, 0.3]), ResidualMode::Bucket).unwrap();
        assert_abs_diff_eq!(h, 0.897946, epsilon = 1e-6);
        // renormalize discards the 0.1 tail
        let h = token_entropy(&cands(&[0.6, 0.3]), ResidualMode::Renormalize).unwrap();
        let (a, b) = (2.0 / 3.0, 1.0 / 3.0);
        assert_abs_diff_eq!(h, -(a * f64::ln(a) + b * f64::ln(b)), epsilon = 1e-12);
    }

    #[test]
    fn entropy_errors() {
        assert!(matches!(
            token_entropy(&[], ResidualMode::Bucket),
            Err(FeatureError::EmptyCandidates)
        ));
        let bad = vec![TopCandidate::new(0, 0.5)];
        assert!(token_entropy(&bad, ResidualMode::Bucket).is_err());
    }

    #[test]
    fn uniform_renormalized_entropy_is_ln_k() {
        for k in 2..=50 {
            let p = 0.9 / k as f64;
            let h = token_entropy(&cands(&vec![p; k]), ResidualMode::Renormalize).unwrap();
            assert_abs_diff_eq!(h, (k as f64).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn kl_examples() {
        let p = cands(&[0.5, 0.5]);
        let q = cands(&[0.9, 0.1]);
        assert_abs_diff_eq!(
            pairwise_kl(&p, &q, 1e-10).unwrap(),
            0.510826,
            epsilon = 1e-6
        );
        assert!(pairwise_kl(&p, &p, 1e-10).unwrap() <= 1e-12);
        assert!(matches!(
            pairwise_kl(&p, &q, 0.0),
            Err(FeatureError::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn kl_disjoint_support() {
        let p = vec![TopCandidate::new(1, 0.0)];
        let q = vec![TopCandidate::new(2, 0.0)];
        let eps: f64 = 1e-10;
        // union {1, 2}: P = [1, eps]/(1+eps), Q = [eps, 1]/(1+eps)
        let z = 1.0 + eps;
        let (p1, p2, q1, q2) = (1.0 / z, eps / z, eps / z, 1.0 / z);
        let oracle = p1 * (p1 / q1).ln() + p2 * (p2 / q2).ln();
        let kl = pairwise_kl(&p, &q, eps).unwrap();
        assert_abs_diff_eq!(kl, oracle, epsilon = 1e-9);
        assert!(kl > 20.0);
    }

    #[test]
    fn moments_examples() {
        assert_eq!(
            standardized_moments(&[2.0, 2.0, 2.0]).unwrap().to_array(),
            [2.0, 0.0, 0.0, 0.0, 0.0]
        );
        let m = standardized_moments(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m.mean, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.var, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.skew, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.kurt, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.hskew, 0.0, epsilon = 1e-12);
        let m = standardized_moments(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.mean, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.var, 0.1875, epsilon = 1e-12);
        assert_abs_diff_eq!(m.skew, 1.154701, epsilon = 1e-6);
        // m4 = 0.08203125, m5 = 0.05859375
        assert_abs_diff_eq!(m.kurt, 0.08203125 / 0.1875f64.powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(m.hskew, 0.05859375 / 0.1875f64.powf(2.5), epsilon = 1e-12);
        assert!(matches!(
            standardized_moments(&[]),
            Err(FeatureError::EmptySeries)
        ));
    }

    #[test]
    fn schema_counts_and_determinism() {
        let s = feature_schema(&["m".into()], 2, &[]).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s.names[0], "m.entropy.mean");
        assert_eq!(s.names[24], "m.p_top_2.hskew");

        let ids: Vec<String> = (0..5).map(|i| format!("m{i}")).collect();
        let pairs = ordered_pairs(&ids);
        assert_eq!(pairs.len(), 20);
        let a = feature_schema(&ids, 50, &pairs).unwrap();
        assert_eq!(a.len(), 1425);
        let b = feature_schema(&ids, 50, &pairs).unwrap();
        assert_eq!(a.schema_id, b.schema_id);
        assert!(a.is_consistent());

        assert!(matches!(
            feature_schema(&["a".into(), "a".into()], 2, &[]),
            Err(FeatureError::DuplicateModel(_))
        ));
    }
}
