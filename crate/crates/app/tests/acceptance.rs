//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use halluguard::arbitration::{answer_category, arbitrate, FinalStatus, ReviewQueue};
use halluguard::classifier::{
    auc, derive_seed, evaluate, load_model, model_to_bytes, save_model, stratified_split,
    train_stacking, LabeledDataset, TrainedModel,
};
use halluguard::features::{
    assemble_feature_vector, pairwise_kl, read_feature_corpus, standardized_moments, token_entropy,
    ResidualMode, DEFAULT_KL_EPSILON, DEGENERATE_VARIANCE,
};
use halluguard::ingest::{
    generate_synthetic_traces, has_results, load_trial_dir, render_prompt, standard_mixture,
    template, template_ids, Phenotype, PhenotypeSpec, TEMPLATE_COUNT,
};
use halluguard::judge::{categorize, judge_answer, Category, JudgeConfig, MockJudge};
use halluguard::planner::{
    accuracy_by_bin, build_plan, read_plan, select_top_fraction, write_bin_csv, write_plan, Action,
    Provenance, RankedItem,
};
use halluguard::trace::{read_trace_file, trace_to_json, write_trace_file, TopCandidate};
use halluguard_app::cli::{EvalArgs, ExtractArgs, SynthArgs, TrainArgs};
use halluguard_app::commands;
use halluguard_app::server::{router, ServiceState};
use halluguard_app::AppConfig;
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Oracles

fn random_dist(rng: &mut ChaCha8Rng, id_space: u64) -> (Vec<TopCandidate>, Vec<(u64, f64)>) {
    let n = rng.random_range(1..=50usize);
    let mut ids: Vec<u64> = Vec::with_capacity(n);
    while ids.len() < n {
        let id = rng.random_range(0..id_space.max(n as u64 * 2));
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let w: Vec<f64> = (0..n)
        .map(|_| rng.random_range(1e-6..1.0f64).powi(3))
        .collect();
    let covered = if rng.random_bool(0.3) {
        1.0
    } else {
        rng.random_range(0.2..1.0)
    };
    let total: f64 = w.iter().sum::<f64>() / covered;
    let probs: Vec<(u64, f64)> = ids
        .iter()
        .zip(&w)
        .map(|(&id, &x)| (id, x / total))
        .collect();
    let top = probs
        .iter()
        .map(|&(id, p)| TopCandidate::new(id, p.ln()))
        .collect();
    (top, probs)
}

fn oracle_entropy(probs: &[f64], mode: ResidualMode) -> f64 {
    let s: f64 = probs.iter().sum();
    let mut h = 0.0;
    match mode {
        ResidualMode::Bucket => {
            for &p in probs {
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            let r = 1.0 - s;
            if r > 0.0 {
                h -= r * r.ln();
            }
        }
        ResidualMode::Renormalize => {
            for &p in probs {
                let q = p / s;
                if q > 0.0 {
                    h -= q * q.ln();
                }
            }
        }
    }
    h
}

fn oracle_kl(p: &[(u64, f64)], q: &[(u64, f64)], eps: f64) -> f64 {
    let mut support: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &(id, x) in p {
        support.entry(id).or_insert((eps, eps)).0 = x;
    }
    for &(id, x) in q {
        support.entry(id).or_insert((eps, eps)).1 = x;
    }
    let a: Vec<f64> = support.values().map(|v| v.0.max(eps)).collect();
    let b: Vec<f64> = support.values().map(|v| v.1.max(eps)).collect();
    let za: f64 = a.iter().sum();
    let zb: f64 = b.iter().sum();
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x / za) * ((x / za).ln() - (y / zb).ln()))
        .sum()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn c1_entropy_kl() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let (top, probs) = random_dist(&mut rng, 120);
        let ps: Vec<f64> = probs.iter().map(|x| x.1).collect();
        for mode in [ResidualMode::Bucket, ResidualMode::Renormalize] {
            let got = token_entropy(&top, mode).map_err(err)?;
            let want = oracle_entropy(&ps, mode);
            worst = worst.max((got - want).abs());
            ensure!(
                close(got, want, 1e-9),
                "case {i} {mode:?}: entropy {got} vs oracle {want}"
            );
        }
        let (top_q, probs_q) = random_dist(&mut rng, 120);
        let got = pairwise_kl(&top, &top_q, DEFAULT_KL_EPSILON).map_err(err)?;
        let want = oracle_kl(&probs, &probs_q, DEFAULT_KL_EPSILON);
        worst = worst.max((got - want).abs());
        ensure!(
            close(got, want, 1e-9),
            "case {i}: KL {got} vs oracle {want}"
        );
        ensure!(got >= -1e-12, "case {i}: negative KL {got}");
        let self_kl = pairwise_kl(&top, &top, DEFAULT_KL_EPSILON).map_err(err)?;
        ensure!(self_kl.abs() <= 1e-12, "case {i}: KL(P,P) = {self_kl}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "10000 cases, max abs diff {worst:.2e}, {elapsed:.2?}"
    ))
}

fn oracle_moments(xs: &[f64]) -> [f64; 5] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let central = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let var = central(2);
    if var < DEGENERATE_VARIANCE {
        return [mean, var, 0.0, 0.0, 0.0];
    }
    let sd = var.sqrt();
    [
        mean,
        var,
        central(3) / sd.powi(3),
        central(4) / var.powi(2),
        central(5) / sd.powi(5),
    ]
}

fn c2_moments() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for i in 0..10_000 {
        let len = rng.random_range(1..=200usize);
        let xs: Vec<f64> = match i % 5 {
            0 => vec![rng.random_range(-5.0..5.0); len],
            1 => {
                let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (0..len.max(2))
                    .map(|_| if rng.random_bool(0.3) { a } else { b })
                    .collect()
            }
            2 => (0..len)
                .map(|_| rng.random_range(0.0..1.0f64).powi(4) * 10.0)
                .collect(),
            _ => (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let got = standardized_moments(&xs).map_err(err)?.to_array();
        let want = oracle_moments(&xs);
        for (j, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure!(
                close(*g, *w, 1e-9),
                "series {i} moment {j}: {g} vs oracle {w}"
            );
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("10000 series, {elapsed:.2?}"))
}

fn c3_auc() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut sets = 0;
    while sets < 1000 {
        let n = rng.random_range(2..=300usize);
        let decimals = rng.random_range(0..=2);
        let scale = 10f64.powi(decimals);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| ((rng.random_range(0.0..1.0) + 0.3 * l as f64) * scale).round() / scale)
            .collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let want = wins / pairs;
        let got = auc(&scores, &labels).map_err(err)?;
        ensure!(
            (got - want).abs() <= 1e-9,
            "set {sets}: {got} vs pair count {want}"
        );
        sets += 1;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("1000 score sets with ties, {elapsed:.2?}"))
}

fn c4_categorize() -> Check {
    let table = [
        ((true, false), Category::Fact, 1.0),
        ((false, true), Category::Hallucination, 0.0),
        ((true, true), Category::JudgmentError, 0.5),
        ((false, false), Category::CoverageGap, 0.5),
    ];
    for ((s, c), cat, score) in table {
        let v = categorize(s, c);
        ensure!(v.category == cat && v.score == score, "({s},{c}) -> {v:?}");
    }
    Ok("4/4 rows".into())
}

fn c5_arbitration() -> Check {
    use FinalStatus::*;
    let table = [
        (Category::Fact, 0.1, Confirmed, false),
        (Category::Fact, 0.9, EscalatedLogicSuspect, true),
        (
            Category::Hallucination,
            0.1,
            EscalatedContaminationSuspect,
            true,
        ),
        (Category::Hallucination, 0.9, FlaggedHallucination, false),
        (Category::CoverageGap, 0.1, ClassifierAdjudicated, true),
        (Category::CoverageGap, 0.9, ClassifierAdjudicated, true),
        (Category::JudgmentError, 0.1, ClassifierAdjudicated, true),
        (Category::JudgmentError, 0.9, ClassifierAdjudicated, true),
    ];
    for (db, p, status, escalate) in table {
        let o = arbitrate(db, p, 0.5).map_err(err)?;
        ensure!(
            o.final_status == status && o.escalate == escalate,
            "{db:?}/{p}: {o:?}"
        );
    }
    let o = arbitrate(Category::Fact, 0.5, 0.5).map_err(err)?;
    ensure!(o.final_status == EscalatedLogicSuspect, "boundary: {o:?}");
    Ok("8/8 cells, boundary counts as hallucination".into())
}

// ---------------------------------------------------------------------------
// Default-configuration pipeline

struct PipelineRun {
    dir: PathBuf,
    auc: f64,
    accuracy: f64,
    elapsed: Duration,
}

impl PipelineRun {
    fn model_path(&self) -> PathBuf {
        self.dir.join("model.json")
    }
}

fn run_pipeline(dir: &Path) -> Result<PipelineRun, String> {
    let start = Instant::now();
    let config = AppConfig::default();
    let p = |name: &str| dir.join(name);
    commands::synth(
        &config,
        &SynthArgs {
            out: p("traces.jsonl"),
        },
    )
    .map_err(err)?;
    commands::extract(
        &config,
        &ExtractArgs {
            traces: p("traces.jsonl"),
            out: p("features.jsonl"),
        },
    )
    .map_err(err)?;
    commands::train(
        &config,
        &TrainArgs {
            features: p("features.jsonl"),
            model: p("model.json"),
            report: None,
        },
    )
    .map_err(err)?;
    commands::eval(
        &config,
        &EvalArgs {
            features: p("features.jsonl"),
            model: p("model.json"),
            out: p("eval.json"),
            all: false,
            roc: Some(p("roc.csv")),
        },
    )
    .map_err(err)?;
    let eval: Value =
        serde_json::from_slice(&std::fs::read(p("eval.json")).map_err(err)?).map_err(err)?;
    let report = &eval["report"];
    Ok(PipelineRun {
        dir: dir.to_path_buf(),
        auc: report["auc"][1][1].as_f64().ok_or("missing auc")?,
        accuracy: report["accuracy"].as_f64().ok_or("missing accuracy")?,
        elapsed: start.elapsed(),
    })
}

fn c6_detection(run: &Result<PipelineRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let summary = format!(
        "AUC {:.4}, accuracy {:.4}, {:.1?}",
        run.auc, run.accuracy, run.elapsed
    );
    ensure!(run.auc >= 0.95, "{summary}");
    ensure!(run.accuracy >= 0.90, "{summary}");
    ensure!(run.elapsed < Duration::from_secs(15 * 60), "{summary}");
    Ok(summary)
}

fn c7_shuffled(run: &Result<PipelineRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let vectors = read_feature_corpus(run.dir.join("features.jsonl")).map_err(err)?;
    let mut ds = LabeledDataset::from_vectors(&vectors).map_err(err)?;
    let mut labels: Vec<_> = ds.rows.iter().map(|r| r.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(707));
    for (row, label) in ds.rows.iter_mut().zip(labels) {
        row.label = label;
    }
    let config = AppConfig::default();
    let (train, test) =
        stratified_split(&ds, config.train.train_fraction, config.seed).map_err(err)?;
    let model = train_stacking(&train, &config.stacking()).map_err(err)?;
    let a = evaluate(&model, &test, config.threshold)
        .map_err(err)?
        .hallucination_auc();
    ensure!((0.35..=0.65).contains(&a), "AUC {a:.4} on shuffled labels");
    Ok(format!("AUC {a:.4}"))
}

// ---------------------------------------------------------------------------
// Planner calibration

fn bernoulli_items(n: usize, seed: u64) -> Vec<RankedItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p: f64 = rng.random();
            RankedItem::new(format!("q{i:05}"), p).with_correct(rng.random_bool(1.0 - p))
        })
        .collect()
}

fn planner_artifacts() -> Result<(Vec<u8>, Vec<u8>), String> {
    let items = bernoulli_items(10_000, 808);
    let table = accuracy_by_bin(&items, 10).map_err(err)?;
    let mut csv = Vec::new();
    write_bin_csv(&table, &mut csv).map_err(err)?;
    let plan = build_plan(
        &items,
        0.4,
        Action::MajorityVote { samples: 10 },
        Provenance::default(),
    )
    .map_err(err)?;
    Ok((csv, serde_json::to_vec(&plan).map_err(err)?))
}

fn c8_planner() -> Check {
    let items = bernoulli_items(10_000, 808);
    let table = accuracy_by_bin(&items, 10).map_err(err)?;
    for w in table.windows(2) {
        ensure!(
            w[1].accuracy <= w[0].accuracy + 0.03,
            "bin {} accuracy {:.4} rises above bin {} ({:.4})",
            w[1].bin,
            w[1].accuracy,
            w[0].bin,
            w[0].accuracy
        );
    }
    let selected = select_top_fraction(&items, 0.4).map_err(err)?.len();
    let want = (0.4f64 * 10_000.0).ceil() as usize;
    ensure!(selected == want, "selected {selected}, expected {want}");
    let accs: Vec<String> = table.iter().map(|b| format!("{:.3}", b.accuracy)).collect();
    Ok(format!(
        "bin accuracy [{}], top 40% = {selected}",
        accs.join(", ")
    ))
}

fn c9_determinism(first: &Result<PipelineRun, String>, scratch: &Path) -> Check {
    let first = first.as_ref().map_err(Clone::clone)?;
    let second = run_pipeline(scratch)?;
    for name in [
        "traces.jsonl",
        "features.jsonl",
        "model.json",
        "eval.json",
        "roc.csv",
    ] {
        let a = std::fs::read(first.dir.join(name)).map_err(err)?;
        let b = std::fs::read(second.dir.join(name)).map_err(err)?;
        ensure!(a == b, "{name} differs between runs");
    }
    let (csv_a, plan_a) = planner_artifacts()?;
    let (csv_b, plan_b) = planner_artifacts()?;
    ensure!(csv_a == csv_b, "bin CSV differs between runs");
    ensure!(plan_a == plan_b, "plan differs between runs");
    Ok("traces, features, model, eval report, ROC, bin CSV and plan byte-identical".into())
}

// ---------------------------------------------------------------------------
// Round trips

fn c10_round_trips(model_path: Option<&Path>, scratch: &Path) -> Check {
    for seed in [3u64, 17, 99] {
        let traces = standard_mixture([4, 3, 3], 3, 8, seed).map_err(err)?;
        let path = scratch.join(format!("t{seed}.jsonl"));
        write_trace_file(&traces, &path).map_err(err)?;
        ensure!(
            read_trace_file(&path).map_err(err)? == traces,
            "trace seed {seed}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<RankedItem> = (0..50)
            .map(|i| RankedItem::new(format!("a{i}"), rng.random()))
            .collect();
        let plan = build_plan(
            &items,
            rng.random_range(0.05..1.0),
            Action::MajorityVote { samples: 5 },
            Provenance {
                model_hash: Some(format!("{seed:064x}")),
                config_hash: None,
                decision_threshold: Some(0.5),
            },
        )
        .map_err(err)?;
        let path = scratch.join(format!("plan{seed}.json"));
        write_plan(&plan, &path).map_err(err)?;
        ensure!(read_plan(&path).map_err(err)? == plan, "plan seed {seed}");

        let path = scratch.join(format!("queue{seed}.jsonl"));
        let mut queue = ReviewQueue::open(&path).map_err(err)?;
        let cats = [
            Category::Fact,
            Category::Hallucination,
            Category::CoverageGap,
            Category::JudgmentError,
        ];
        for i in 0..20 {
            let o = arbitrate(cats[rng.random_range(0..4)], rng.random(), 0.5).map_err(err)?;
            if o.escalate {
                let item = queue.enqueue(&format!("ans-{i}"), &o).map_err(err)?;
                if rng.random_bool(0.5) {
                    queue
                        .resolve(&item.item_id, halluguard::arbitration::HumanLabel::Fact)
                        .map_err(err)?;
                }
            }
        }
        let back = ReviewQueue::open(&path).map_err(err)?;
        ensure!(
            queue.items().eq(back.items()) && queue.feedback() == back.feedback(),
            "queue seed {seed}"
        );
    }
    let model_path = model_path.ok_or("no trained model")?;
    let model = load_model(model_path).map_err(err)?;
    let copy = scratch.join("model-copy.json");
    save_model(&model, &copy).map_err(err)?;
    let back = load_model(&copy).map_err(err)?;
    ensure!(back == model, "model differs after reload");
    ensure!(
        model_to_bytes(&back) == std::fs::read(model_path).map_err(err)?,
        "model bytes differ after reload"
    );
    Ok("trace, plan, queue over 3 seeds; trained model".into())
}

// ---------------------------------------------------------------------------
// Contamination path

fn c11_contamination(model_path: Option<&Path>, scratch: &Path) -> Check {
    let model = load_model(model_path.ok_or("no trained model")?).map_err(err)?;
    let spec = model
        .feature_spec
        .clone()
        .ok_or("model carries no feature spec")?;
    let traces = generate_synthetic_traces(
        &PhenotypeSpec::new(Phenotype::Contaminated, 50, derive_seed(4242, 3)),
        3,
        20,
    )
    .map_err(err)?;

    let judge = MockJudge::new()
        .with_facts(["The trial enrolled 42 participants."])
        .with_negation(
            "The trial enrolled 120 participants.",
            "The trial enrolled 42 participants.",
        );
    let judgement = judge_answer(
        "The trial enrolled 120 participants.",
        "NCT00003468 enrolled 42 participants.",
        &judge,
        None,
        &JudgeConfig::default(),
    )
    .map_err(err)?;
    let db = answer_category(&judgement).ok_or("no category")?;
    ensure!(db == Category::Hallucination, "database verdict {db:?}");

    let mut queue = ReviewQueue::open(scratch.join("queue.jsonl")).map_err(err)?;
    let mut worst = 0.0f64;
    for t in &traces {
        let v = assemble_feature_vector(t, &spec.schema, &spec.config).map_err(err)?;
        let p = model.predict_values(&v.values).map_err(err)?;
        worst = worst.max(p);
        ensure!(p < 0.5, "{} scored {p:.3}", t.answer_id());
        let o = arbitrate(db, p, 0.5).map_err(err)?;
        ensure!(
            o.final_status == FinalStatus::EscalatedContaminationSuspect && o.escalate,
            "{}: {o:?}",
            t.answer_id()
        );
        queue.enqueue(&t.answer_id(), &o).map_err(err)?;
    }
    let reopened = ReviewQueue::open(scratch.join("queue.jsonl")).map_err(err)?;
    let pending = reopened
        .pending()
        .filter(|i| i.outcome.final_status == FinalStatus::EscalatedContaminationSuspect)
        .count();
    ensure!(pending == traces.len(), "{pending} pending items");
    Ok(format!(
        "{} traces, max p {worst:.3}, all pending review",
        traces.len()
    ))
}

fn c12_ingest() -> Check {
    let trials = load_trial_dir(fixtures().join("trials")).map_err(err)?;
    let got: Vec<bool> = trials.iter().map(has_results).collect();
    ensure!(got == [true, true, false], "has_results {got:?}");
    let ids = template_ids();
    ensure!(
        ids.len() == TEMPLATE_COUNT && TEMPLATE_COUNT == 20,
        "{} templates",
        ids.len()
    );
    for id in ids {
        let slots: BTreeMap<String, String> = template(id)
            .map_err(err)?
            .slots
            .iter()
            .map(|s| (s.clone(), format!("[{s}]")))
            .collect();
        let text = render_prompt(id, &slots).map_err(err)?;
        ensure!(!text.contains("{{"), "{id} left a slot");
    }
    Ok("3 trials, 20 templates".into())
}

// ---------------------------------------------------------------------------
// Service

async fn call(app: axum::Router, method: &str, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

async fn service_suite(model: TrainedModel) -> Check {
    let app = router(ServiceState::new(Some(model), Some("model".into()), 0.5));
    let fresh = standard_mixture([1, 0, 0], 3, 50, 9090).map_err(err)?;
    let (s, body) = call(app.clone(), "POST", "/v1/score", trace_to_json(&fresh[0])).await;
    ensure!(s == StatusCode::OK, "factual trace: {s} {body}");
    let p = body["hallucination_probability"].as_f64().unwrap_or(1.0);
    ensure!(p < 0.5, "factual trace scored {p}");

    let (s, _) = call(app.clone(), "POST", "/v1/score", "{\"models\": 3".into()).await;
    ensure!(s == StatusCode::BAD_REQUEST, "malformed trace: {s}");

    let two = standard_mixture([1, 0, 0], 2, 50, 9091).map_err(err)?;
    let (s, _) = call(app.clone(), "POST", "/v1/score", trace_to_json(&two[0])).await;
    ensure!(
        s == StatusCode::UNPROCESSABLE_ENTITY,
        "two-model trace: {s}"
    );

    let empty = router(ServiceState::new(None, None, 0.5));
    let (s, _) = call(empty, "POST", "/v1/score", trace_to_json(&fresh[0])).await;
    ensure!(s == StatusCode::SERVICE_UNAVAILABLE, "no model: {s}");

    let (s, body) = call(
        app.clone(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact","clf_probability":0.9}"#.into(),
    )
    .await;
    ensure!(
        s == StatusCode::OK && body["final_status"] == "EscalatedLogicSuspect",
        "arbitrate: {s} {body}"
    );
    let (s, _) = call(
        app.clone(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact","clf_probability":1.5}"#.into(),
    )
    .await;
    ensure!(
        s == StatusCode::UNPROCESSABLE_ENTITY,
        "probability 1.5: {s}"
    );
    let (s, _) = call(app, "POST", "/v1/arbitrate", r#"{"db":"Fact"}"#.into()).await;
    ensure!(s == StatusCode::BAD_REQUEST, "bad body: {s}");
    Ok(format!("7 golden requests, factual p {p:.3}"))
}

fn c13_service(model_path: Option<&Path>) -> Check {
    let model = load_model(model_path.ok_or("no trained model")?).map_err(err)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(err)?;
    rt.block_on(service_suite(model))
}

// ---------------------------------------------------------------------------

fn report(n: usize, name: &str, f: impl FnOnce() -> Check, failures: &mut usize) {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match result {
        Ok(detail) => println!("[PASS] {n:>2} {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("[FAIL] {n:>2} {name}: {detail}");
        }
    }
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let dir = |name: &str| {
        let p = root.path().join(name);
        std::fs::create_dir_all(&p).expect("mkdir");
        p
    };
    let mut failures = 0;

    report(1, "entropy and KL oracles", c1_entropy_kl, &mut failures);
    report(2, "moment oracles", c2_moments, &mut failures);
    report(3, "AUC pair counting", c3_auc, &mut failures);
    report(4, "judge categorization", c4_categorize, &mut failures);
    report(5, "arbitration table", c5_arbitration, &mut failures);

    let run = run_pipeline(&dir("run-a"));
    let model_path = run.as_ref().ok().map(PipelineRun::model_path);
    let model_path = model_path.as_deref();
    report(
        6,
        "detection on default configuration",
        || c6_detection(&run),
        &mut failures,
    );
    report(
        7,
        "shuffled-label control",
        || c7_shuffled(&run),
        &mut failures,
    );
    report(8, "planner calibration", c8_planner, &mut failures);
    report(
        9,
        "deterministic reruns",
        || c9_determinism(&run, &dir("run-b")),
        &mut failures,
    );
    report(
        10,
        "artifact round trips",
        || c10_round_trips(model_path, &dir("rt")),
        &mut failures,
    );
    report(
        11,
        "contamination escalation",
        || c11_contamination(model_path, &dir("contam")),
        &mut failures,
    );
    report(12, "ingest fixtures", c12_ingest, &mut failures);
    report(
        13,
        "service golden suite",
        || c13_service(model_path),
        &mut failures,
    );

    println!("{} of 13 criteria passed", 13 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
