//! Seeded generator for phenotype traces: factual, confused, confabulated and
//! contaminated answers scored by a small mock ensemble.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{IngestError, Result};
use crate::classifier::derive_seed;
use crate::trace::{EnsembleTrace, Label, ModelTrace, TokenStep, TopCandidate};

const VOCAB: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phenotype {
    Factual,
    Confused,
    Confabulated,
    /// Statistically factual but wrong; only a database check can catch it.
    Contaminated,
}

impl Phenotype {
    pub fn label(self) -> Label {
        match self {
            Phenotype::Factual => Label::Fact,
            _ => Label::Hallucination,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phenotype::Factual => "factual",
            Phenotype::Confused => "confused",
            Phenotype::Confabulated => "confabulated",
            Phenotype::Contaminated => "contaminated",
        }
    }
}

impl std::str::FromStr for Phenotype {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factual" => Ok(Phenotype::Factual),
            "confused" => Ok(Phenotype::Confused),
            "confabulated" => Ok(Phenotype::Confabulated),
            "contaminated" => Ok(Phenotype::Contaminated),
            other => Err(IngestError::InvalidSpec(format!(
                "unknown phenotype {other}"
            ))),
        }
    }
}

/// Shape of each model's next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntropyRegime {
    /// Top-1 probability drawn uniformly from `[top1_min, top1_max]`.
    Peaked { top1_min: f64, top1_max: f64 },
    /// All k candidates near-equal; weights `1 ± jitter`.
    NearUniform { jitter: f64 },
}

/// How the ensemble members relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceRegime {
    /// Same candidates and peak; log-normal jitter of scale `jitter` on masses.
    Shared { jitter: f64 },
    /// Each model peaks on a different token.
    Disagreeing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeSpec {
    pub phenotype: Phenotype,
    pub entropy: EntropyRegime,
    pub divergence: DivergenceRegime,
    pub min_len: usize,
    pub max_len: usize,
    pub k: usize,
    pub seed: u64,
}

impl PhenotypeSpec {
    pub fn new(phenotype: Phenotype, k: usize, seed: u64) -> Self {
        let (entropy, divergence) = match phenotype {
            Phenotype::Factual | Phenotype::Contaminated => (
                EntropyRegime::Peaked {
                    top1_min: 0.85,
                    top1_max: 0.99,
                },
                DivergenceRegime::Shared { jitter: 0.02 },
            ),
            Phenotype::Confused => (
                EntropyRegime::NearUniform { jitter: 0.1 },
                DivergenceRegime::Shared { jitter: 0.05 },
            ),
            Phenotype::Confabulated => (
                EntropyRegime::Peaked {
                    top1_min: 0.6,
                    top1_max: 0.95,
                },
                DivergenceRegime::Disagreeing,
            ),
        };
        Self {
            phenotype,
            entropy,
            divergence,
            min_len: 20,
            max_len: 60,
            k,
            seed,
        }
    }

    /// Rejects regimes that contradict the phenotype: factual and
    /// contaminated answers are peaked and shared, confused answers flat,
    /// confabulated answers peaked with disagreeing models.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IngestError::InvalidSpec(m.to_string()));
        if self.k < 2 {
            return bad("k must be ≥ 2");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 1 ≤ min ≤ max");
        }
        match self.entropy {
            EntropyRegime::Peaked { top1_min, top1_max } => {
                if !(0.0 < top1_min && top1_min <= top1_max && top1_max < 1.0) {
                    return bad("peaked regime needs 0 < top1_min ≤ top1_max < 1");
                }
            }
            EntropyRegime::NearUniform { jitter } => {
                if !(0.0..0.5).contains(&jitter) {
                    return bad("near-uniform jitter must lie in [0, 0.5)");
                }
            }
        }
        if let DivergenceRegime::Shared { jitter } = self.divergence {
            if !(0.0..0.5).contains(&jitter) {
                return bad("shared jitter must lie in [0, 0.5)");
            }
        }
        match (self.phenotype, self.entropy, self.divergence) {
            (
                Phenotype::Factual | Phenotype::Contaminated,
                EntropyRegime::Peaked { top1_min, .. },
                DivergenceRegime::Shared { .. },
            ) if top1_min >= 0.5 => Ok(()),
            (
                Phenotype::Confused,
                EntropyRegime::NearUniform { .. },
                DivergenceRegime::Shared { .. },
            ) => Ok(()),
            (
                Phenotype::Confabulated,
                EntropyRegime::Peaked { top1_min, .. },
                DivergenceRegime::Disagreeing,
            ) if top1_min >= 0.5 => Ok(()),
            (p, e, d) => Err(IngestError::InvalidSpec(format!(
                "invalid regime ordering for {}: {e:?} with {d:?}",
                p.as_str()
            ))),
        }
    }
}

fn distinct_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    sample(rng, VOCAB, n)
        .into_iter()
        .map(|i| i as u64)
        .collect()
}

/// Geometrically decaying tail weights with multiplicative noise, scaled to `mass`.
fn tail(rng: &mut ChaCha8Rng, n: usize, mass: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|i| 0.8f64.powi(i as i32) * rng.random_range(0.5..1.5))
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x *= mass / total);
    w
}

fn jittered(rng: &mut ChaCha8Rng, base: &[f64], noise: &Normal<f64>, cap: f64) -> Vec<f64> {
    let mut w: Vec<f64> = base.iter().map(|&p| p * noise.sample(rng).exp()).collect();
    let total: f64 = w.iter().sum();
    if total > cap {
        w.iter_mut().for_each(|x| *x *= cap / total);
    }
    w
}

fn step(token: u64, ids: &[u64], probs: &[f64], k: usize) -> TokenStep {
    let top: Vec<TopCandidate> = ids
        .iter()
        .zip(probs)
        .map(|(&id, &p)| TopCandidate::new(id, p.ln()))
        .collect();
    let lp = ids
        .iter()
        .position(|&id| id == token)
        .map_or(-20.0, |i| probs[i].ln());
    TokenStep::from_candidates(token, lp, top, k).expect("generated step is valid")
}

/// One time step for every model.
fn position(spec: &PhenotypeSpec, n_models: usize, rng: &mut ChaCha8Rng) -> Vec<TokenStep> {
    let k = spec.k;
    match (spec.entropy, spec.divergence) {
        (EntropyRegime::Peaked { top1_min, top1_max }, DivergenceRegime::Shared { jitter }) => {
            let ids = distinct_tokens(rng, k);
            let top1 = rng.random_range(top1_min..=top1_max);
            let listed_tail = (1.0 - top1) * rng.random_range(0.5..0.9);
            let mut base = vec![top1];
            base.extend(tail(rng, k - 1, listed_tail));
            let noise = Normal::new(0.0, jitter).expect("finite jitter");
            (0..n_models)
                .map(|_| {
                    let probs = jittered(rng, &base, &noise, 0.999);
                    step(ids[0], &ids, &probs, k)
                })
                .collect()
        }
        (EntropyRegime::NearUniform { jitter }, DivergenceRegime::Shared { jitter: shared }) => {
            let ids = distinct_tokens(rng, k);
            let mass = rng.random_range(0.95..0.99);
            let raw: Vec<f64> = (0..k)
                .map(|_| 1.0 + rng.random_range(-jitter..=jitter))
                .collect();
            let total: f64 = raw.iter().sum();
            let base: Vec<f64> = raw.iter().map(|w| w * mass / total).collect();
            let token = ids[rng.random_range(0..k)];
            let noise = Normal::new(0.0, shared).expect("finite jitter");
            (0..n_models)
                .map(|_| {
                    let probs = jittered(rng, &base, &noise, 0.999);
                    step(token, &ids, &probs, k)
                })
                .collect()
        }
        (EntropyRegime::Peaked { top1_min, top1_max }, DivergenceRegime::Disagreeing) => {
            let peaks = n_models.min(k);
            let ids = distinct_tokens(rng, k + n_models);
            let token = ids[rng.random_range(0..peaks)];
            (0..n_models)
                .map(|m| {
                    let top1 = rng.random_range(top1_min..=top1_max);
                    let listed_tail = (1.0 - top1) * rng.random_range(0.5..0.9);
                    // own peak first, then the other models' peaks, then filler
                    let mut own: Vec<u64> = vec![ids[m % peaks]];
                    own.extend((0..peaks).filter(|&j| j != m % peaks).map(|j| ids[j]));
                    let mut filler: Vec<u64> = ids[peaks..].to_vec();
                    let offset = rng.random_range(0..filler.len());
                    filler.rotate_left(offset);
                    own.extend(filler.into_iter().take(k - own.len()));
                    let mut probs = vec![top1];
                    probs.extend(tail(rng, k - 1, listed_tail));
                    step(token, &own, &probs, k)
                })
                .collect()
        }
        _ => unreachable!("validated spec"),
    }
}

pub fn model_ids(n_models: usize) -> Vec<String> {
    (0..n_models).map(|m| format!("m{m}")).collect()
}

fn answer(spec: &PhenotypeSpec, n_models: usize, index: usize) -> EnsembleTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut per_model: Vec<Vec<TokenStep>> = vec![Vec::with_capacity(len); n_models];
    for _ in 0..len {
        for (m, s) in position(spec, n_models, &mut rng).into_iter().enumerate() {
            per_model[m].push(s);
        }
    }
    let traces = model_ids(n_models)
        .into_iter()
        .zip(per_model)
        .map(|(id, steps)| ModelTrace::new(id, spec.k, steps).expect("non-empty trace"))
        .collect();
    let answer_id = format!("{}-{}-{index:05}", spec.phenotype.as_str(), spec.seed);
    EnsembleTrace::new(
        answer_id.clone(),
        answer_id,
        "0",
        Some(spec.phenotype.label()),
        traces,
    )
    .expect("distinct model ids")
}

/// `n_answers` traces of one phenotype; identical for identical inputs.
pub fn generate_synthetic_traces(
    spec: &PhenotypeSpec,
    n_models: usize,
    n_answers: usize,
) -> Result<Vec<EnsembleTrace>> {
    spec.validate()?;
    if n_models < 2 {
        return Err(IngestError::InvalidSpec("need at least 2 models".into()));
    }
    Ok((0..n_answers).map(|i| answer(spec, n_models, i)).collect())
}

/// Concatenates several phenotype corpora. Each spec gets its own seed
/// stream so adding a class does not perturb the others.
pub fn generate_mixture(
    parts: &[(PhenotypeSpec, usize)],
    n_models: usize,
) -> Result<Vec<EnsembleTrace>> {
    let mut out = Vec::new();
    for (spec, n) in parts {
        out.extend(generate_synthetic_traces(spec, n_models, *n)?);
    }
    Ok(out)
}

/// Factual, confused and confabulated answers in the given counts, with
/// per-class seeds derived from `seed`.
pub fn standard_mixture(
    counts: [usize; 3],
    n_models: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<EnsembleTrace>> {
    let classes = [
        Phenotype::Factual,
        Phenotype::Confused,
        Phenotype::Confabulated,
    ];
    let parts: Vec<(PhenotypeSpec, usize)> = classes
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (&p, n))| (PhenotypeSpec::new(p, k, derive_seed(seed, i as u64)), n))
        .collect();
    generate_mixture(&parts, n_models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{kl_series, token_entropy, ResidualMode};
    use crate::trace::AlignStrategy;

    fn mean_entropy(traces: &[EnsembleTrace]) -> f64 {
        let (mut s, mut n) = (0.0, 0);
        for t in traces {
            for m in t.model_traces() {
                for st in m.steps() {
                    s += token_entropy(st.top(), ResidualMode::Bucket).unwrap();
                    n += 1;
                }
            }
        }
        s / n as f64
    }

    fn mean_kl(traces: &[EnsembleTrace]) -> f64 {
        let (mut s, mut n) = (0.0, 0);
        for t in traces {
            let ms = t.model_traces();
            let series = kl_series(&ms[0], &ms[1], AlignStrategy::Strict, 1e-10).unwrap();
            s += series.values.iter().sum::<f64>();
            n += series.values.len();
        }
        s / n as f64
    }

    #[test]
    fn phenotype_regimes_hold() {
        let f = generate_synthetic_traces(&PhenotypeSpec::new(Phenotype::Factual, 50, 1), 2, 20)
            .unwrap();
        let c = generate_synthetic_traces(&PhenotypeSpec::new(Phenotype::Confused, 50, 2), 2, 20)
            .unwrap();
        let x =
            generate_synthetic_traces(&PhenotypeSpec::new(Phenotype::Confabulated, 50, 3), 2, 20)
                .unwrap();
        assert!(mean_kl(&f) < 0.05, "factual kl {}", mean_kl(&f));
        assert!(mean_entropy(&c) > 0.9 * 50f64.ln());
        assert!(mean_entropy(&c) > mean_entropy(&f));
        assert!(mean_kl(&x) > mean_kl(&f) + 1.0);
        for t in &f {
            let n = t.model_traces()[0].len();
            assert!((20..=60).contains(&n));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhenotypeSpec::new(Phenotype::Confabulated, 20, 9);
        assert_eq!(
            generate_synthetic_traces(&spec, 3, 5).unwrap(),
            generate_synthetic_traces(&spec, 3, 5).unwrap()
        );
    }

    #[test]
    fn bad_regimes_rejected() {
        let mut spec = PhenotypeSpec::new(Phenotype::Factual, 50, 0);
        spec.entropy = EntropyRegime::NearUniform { jitter: 0.1 };
        assert!(spec.validate().is_err());
        let mut spec = PhenotypeSpec::new(Phenotype::Confabulated, 50, 0);
        spec.divergence = DivergenceRegime::Shared { jitter: 0.0 };
        assert!(spec.validate().is_err());
        assert!(
            generate_synthetic_traces(&PhenotypeSpec::new(Phenotype::Factual, 50, 0), 1, 1)
                .is_err()
        );
    }

    #[test]
    fn contaminated_is_labeled_hallucination() {
        let t =
            generate_synthetic_traces(&PhenotypeSpec::new(Phenotype::Contaminated, 10, 4), 2, 1)
                .unwrap();
        assert_eq!(t[0].label(), Some(Label::Hallucination));
    }
}
