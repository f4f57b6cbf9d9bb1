//! One function per subcommand. Each reads its inputs, writes its artifacts
//! and returns a short human-readable summary for standard output.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use halluguard::arbitration::{
    answer_category, arbitrate, merge_feedback, ArbitrationOutcome, HumanLabel, ReviewQueue,
};
use halluguard::classifier::{
    derive_seed, evaluate, file_hash, load_model, pca_rows, predict_batch, save_model,
    stratified_split, train_stacking, write_roc_csv, EvalReport, LabeledDataset, TrainedModel,
};
use halluguard::features::{
    extract_corpus, read_feature_corpus, read_feature_spec, schema_for_corpus, spec_path,
    write_feature_corpus, write_feature_spec, FeatureSpec, FeatureVector,
};
use halluguard::ingest::{
    generate_synthetic_traces, load_labeled_dataset, standard_mixture, Phenotype, PhenotypeSpec,
};
use halluguard::judge::{
    judge_answer, label_distribution, retrieve_context, Category, ContextStore, Decomposer,
    JudgeConfig, JudgeProvider, LlmDecomposer, LlmJudge, MockJudge,
};
use halluguard::planner::{
    accuracy_by_bin, build_plan, write_bin_csv, write_plan, Provenance, RankedItem,
};
use halluguard::providers::{OpenAiClient, TranscriptLog};
use halluguard::trace::{read_trace_file, write_trace_file, Label};
use serde::Serialize;

use crate::cli::{
    ArbitrateArgs, Cli, Command, EvalArgs, ExtractArgs, JudgeArgs, PlanArgs, PredictArgs,
    ReportArgs, ReviewAction, SynthArgs, TrainArgs,
};
use crate::config::{load_config, AppConfig, JudgeBackend};
use crate::io::{
    read_json, read_jsonl, write_json, write_jsonl, AnswerRecord, JudgementRecord, MockFacts,
    Prediction,
};
use crate::{AppError, Result};

/// Loads the configuration and dispatches. `serve` blocks until shutdown.
pub fn run(cli: Cli) -> Result<String> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Synth(a) => synth(&config, &a),
        Command::Extract(a) => extract(&config, &a),
        Command::Train(a) => train(&config, &a),
        Command::Eval(a) => eval(&config, &a),
        Command::Predict(a) => predict(&config, &a),
        Command::Judge(a) => judge(&config, &a),
        Command::Arbitrate(a) => arbitrate_cmd(&config, &a),
        Command::Plan(a) => plan(&config, &a),
        Command::Report(a) => report(&config, &a),
        Command::Review(a) => review(&config, a.action),
        Command::Serve(a) => {
            let model = a.model.or_else(|| config.serve.model.clone());
            let addr = a.addr.unwrap_or_else(|| config.serve.addr.clone());
            crate::server::serve(&addr, model.as_deref(), config.threshold)?;
            Ok(String::new())
        }
    }
}

pub fn synth(config: &AppConfig, args: &SynthArgs) -> Result<String> {
    let s = &config.synth;
    let mut traces = standard_mixture(
        [s.n_factual, s.n_confused, s.n_confabulated],
        s.n_models,
        s.k,
        config.seed,
    )?;
    if s.n_contaminated > 0 {
        let spec = PhenotypeSpec::new(Phenotype::Contaminated, s.k, derive_seed(config.seed, 3));
        traces.extend(generate_synthetic_traces(
            &spec,
            s.n_models,
            s.n_contaminated,
        )?);
    }
    write_trace_file(&traces, &args.out)?;
    Ok(format!(
        "wrote {} traces to {}",
        traces.len(),
        args.out.display()
    ))
}

pub fn extract(config: &AppConfig, args: &ExtractArgs) -> Result<String> {
    let traces = read_trace_file(&args.traces)?;
    let schema = schema_for_corpus(&traces)?;
    let vectors = extract_corpus(&traces, &schema, &config.features)?;
    write_feature_corpus(&vectors, &args.out)?;
    let spec = FeatureSpec {
        schema,
        config: config.features.clone(),
    };
    write_feature_spec(&spec, spec_path(&args.out))?;
    let warned = vectors.iter().filter(|v| !v.warnings.is_empty()).count();
    Ok(format!(
        "wrote {} vectors ({} features, schema {}) to {}; {warned} with warnings",
        vectors.len(),
        spec.schema.len(),
        spec.schema.schema_id,
        args.out.display()
    ))
}

fn split(config: &AppConfig, ds: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok(stratified_split(
        ds,
        config.train.train_fraction,
        config.seed,
    )?)
}

#[derive(Debug, Serialize)]
struct EvalArtifact<'a> {
    config_hash: String,
    model_hash: String,
    report: &'a EvalReport,
}

pub fn train(config: &AppConfig, args: &TrainArgs) -> Result<String> {
    let ds = load_labeled_dataset(&args.features)?;
    let (train_set, test_set) = split(config, &ds)?;
    let mut model = train_stacking(&train_set, &config.stacking())?;
    let sidecar = spec_path(&args.features);
    if sidecar.exists() {
        model = model.with_feature_spec(read_feature_spec(&sidecar)?)?;
    }
    model.metadata.config_hash = Some(config.hash());
    save_model(&model, &args.model)?;
    let report = evaluate(&model, &test_set, config.threshold)?;
    if let Some(path) = &args.report {
        let model_hash = file_hash(&args.model).map_err(AppError::io(&args.model))?;
        write_json(
            path,
            &EvalArtifact {
                config_hash: config.hash(),
                model_hash,
                report: &report,
            },
        )?;
    }
    Ok(format!(
        "trained on {} rows, held out {}\n{}",
        train_set.len(),
        test_set.len(),
        report.to_table()
    ))
}

pub fn eval(config: &AppConfig, args: &EvalArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let ds = load_labeled_dataset(&args.features)?;
    let test_set = if args.all { ds } else { split(config, &ds)?.1 };
    let report = evaluate(&model, &test_set, config.threshold)?;
    let model_hash = file_hash(&args.model).map_err(AppError::io(&args.model))?;
    write_json(
        &args.out,
        &EvalArtifact {
            config_hash: config.hash(),
            model_hash,
            report: &report,
        },
    )?;
    if let Some(path) = &args.roc {
        write_roc_csv(&report.roc, path).map_err(AppError::io(path))?;
    }
    Ok(report.to_table())
}

fn vectors_for_model(
    model: &TrainedModel,
    input: &Path,
    traces: bool,
) -> Result<Vec<FeatureVector>> {
    if !traces {
        return Ok(read_feature_corpus(input)?);
    }
    let spec = model.feature_spec.as_ref().ok_or_else(|| {
        AppError::Domain("model carries no feature spec; score a feature corpus instead".into())
    })?;
    let traces = read_trace_file(input)?;
    Ok(extract_corpus(&traces, &spec.schema, &spec.config)?)
}

pub fn predict(config: &AppConfig, args: &PredictArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let vectors = vectors_for_model(&model, &args.input, args.traces)?;
    let probs = predict_batch(&model, &vectors)?;
    let hash = config.hash();
    let rows: Vec<Prediction> = vectors
        .iter()
        .zip(probs)
        .map(|(v, p)| Prediction {
            answer_id: v.answer_id.clone(),
            hallucination_probability: p,
            label: v.label,
            schema_id: v.schema_id.clone(),
            config_hash: hash.clone(),
        })
        .collect();
    write_jsonl(&args.out, &rows)?;
    let flagged = rows
        .iter()
        .filter(|r| r.hallucination_probability >= config.threshold)
        .count();
    Ok(format!(
        "scored {} answers; {flagged} at or above threshold {}",
        rows.len(),
        config.threshold
    ))
}

fn judge_backend(
    config: &AppConfig,
    transcript: Option<&Path>,
) -> Result<(Box<dyn JudgeProvider>, Option<Box<dyn Decomposer>>)> {
    match config.judge.backend {
        JudgeBackend::Mock => {
            let facts: MockFacts = match &config.judge.mock_facts {
                Some(p) => read_json(p)?,
                None => MockFacts::default(),
            };
            let mut judge = MockJudge::new().with_facts(facts.facts);
            for (s, neg) in &facts.negations {
                judge = judge.with_negation(s, neg);
            }
            Ok((Box::new(judge), None))
        }
        JudgeBackend::Llm => {
            let log = match transcript {
                Some(p) => Some(Arc::new(TranscriptLog::open(p).map_err(AppError::io(p))?)),
                None => None,
            };
            let client = Arc::new(OpenAiClient::new(config.provider.clone(), log)?);
            Ok((
                Box::new(LlmJudge::new(client.clone())),
                Some(Box::new(LlmDecomposer::new(client))),
            ))
        }
    }
}

pub fn judge(config: &AppConfig, args: &JudgeArgs) -> Result<String> {
    let answers: Vec<AnswerRecord> = read_jsonl(&args.answers)?;
    let contexts_path = config
        .judge
        .contexts
        .as_ref()
        .ok_or_else(|| AppError::Config("judge.contexts is not set".into()))?;
    let store = ContextStore::load(contexts_path)?;
    let (provider, decomposer) = judge_backend(config, args.transcript.as_deref())?;
    let jc = JudgeConfig {
        granularity: config.judge.granularity,
        retry: config.judge.retry,
        concurrency: config.judge.concurrency,
    };
    let hash = config.hash();
    let mut records = Vec::with_capacity(answers.len());
    for a in &answers {
        let ctx = retrieve_context(&store, &a.context_key, config.judge.fallback)?;
        let judgement = judge_answer(
            &a.text,
            &ctx.text,
            provider.as_ref(),
            decomposer.as_deref(),
            &jc,
        )?;
        records.push(JudgementRecord {
            answer_id: a.answer_id.clone(),
            source: a.source.clone(),
            context_key: ctx.key,
            context_overlap: ctx.overlap,
            category: answer_category(&judgement),
            judgement,
            config_hash: hash.clone(),
        });
    }
    write_jsonl(&args.out, &records)?;

    let mut by_source: BTreeMap<&str, Vec<&JudgementRecord>> = BTreeMap::new();
    for r in &records {
        by_source
            .entry(r.source.as_deref().unwrap_or("all"))
            .or_default()
            .push(r);
    }
    let mut out = format!(
        "{:<20} {:>6} {:>12} {:>14} {:>10} {:>8}\n",
        "source", "n", "factuality", "hallucination", "coverage", "error"
    );
    for (source, rs) in by_source {
        let d = label_distribution(rs.iter().map(|r| &r.judgement));
        let _ = writeln!(
            out,
            "{source:<20} {:>6} {:>11.1}% {:>13.1}% {:>9.1}% {:>7.1}%",
            d.n, d.factuality, d.hallucination, d.coverage, d.error
        );
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ArbitrationRecord {
    answer_id: String,
    outcome: ArbitrationOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    review_item: Option<String>,
    config_hash: String,
}

pub fn arbitrate_cmd(config: &AppConfig, args: &ArbitrateArgs) -> Result<String> {
    if let (Some(cat), Some(p)) = (&args.db_category, args.probability) {
        let category: Category = cat.parse()?;
        let outcome = arbitrate(category, p, config.threshold)?;
        return Ok(serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
    }
    let (Some(jpath), Some(ppath), Some(out)) = (&args.judgements, &args.predictions, &args.out)
    else {
        return Err(AppError::Usage(
            "arbitrate needs --judgements, --predictions and --out, or --db-category and --probability"
                .into(),
        ));
    };
    let judgements: Vec<JudgementRecord> = read_jsonl(jpath)?;
    let predictions: Vec<Prediction> = read_jsonl(ppath)?;
    let probs: HashMap<&str, f64> = predictions
        .iter()
        .map(|p| (p.answer_id.as_str(), p.hallucination_probability))
        .collect();
    let mut queue = ReviewQueue::open(&config.review.queue)?;
    let hash = config.hash();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for j in &judgements {
        let Some(category) = j.category else {
            skipped += 1;
            continue;
        };
        let p = *probs
            .get(j.answer_id.as_str())
            .ok_or_else(|| AppError::Domain(format!("no prediction for answer {}", j.answer_id)))?;
        let outcome = arbitrate(category, p, config.threshold)?;
        let review_item = if outcome.escalate {
            Some(queue.enqueue(&j.answer_id, &outcome)?.item_id)
        } else {
            None
        };
        rows.push(ArbitrationRecord {
            answer_id: j.answer_id.clone(),
            outcome,
            review_item,
            config_hash: hash.clone(),
        });
    }
    write_jsonl(out, &rows)?;
    let escalated = rows.iter().filter(|r| r.review_item.is_some()).count();
    Ok(format!(
        "arbitrated {} answers; {escalated} escalated to review; {skipped} without statements",
        rows.len()
    ))
}

pub fn plan(config: &AppConfig, args: &PlanArgs) -> Result<String> {
    let predictions: Vec<Prediction> = read_jsonl(&args.predictions)?;
    let items: Vec<RankedItem> = predictions
        .iter()
        .map(|p| RankedItem::new(p.answer_id.clone(), p.hallucination_probability))
        .collect();
    let model_hash = match &args.model {
        Some(m) => Some(file_hash(m).map_err(AppError::io(m))?),
        None => None,
    };
    let provenance = Provenance {
        model_hash,
        config_hash: Some(config.hash()),
        decision_threshold: Some(config.threshold),
    };
    let plan = build_plan(
        &items,
        config.plan.fraction,
        config.plan.action.clone(),
        provenance,
    )?;
    write_plan(&plan, &args.out)?;
    Ok(format!(
        "selected {} of {} answers for {:?}",
        plan.selected.len(),
        items.len(),
        plan.action
    ))
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    config_hash: String,
    n: usize,
    auc: f64,
    accuracy: f64,
    threshold: f64,
    bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    explained_variance_ratio: Option<Vec<f64>>,
}

pub fn report(config: &AppConfig, args: &ReportArgs) -> Result<String> {
    let predictions: Vec<Prediction> = read_jsonl(&args.predictions)?;
    let mut scores = Vec::with_capacity(predictions.len());
    let mut labels = Vec::with_capacity(predictions.len());
    let mut items = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let label = p.label.ok_or_else(|| {
            AppError::Domain(format!(
                "prediction {} has no ground-truth label",
                p.answer_id
            ))
        })?;
        scores.push(p.hallucination_probability);
        labels.push(label.as_class());
        // An answer is correct when its ground truth is factual.
        items.push(
            RankedItem::new(p.answer_id.clone(), p.hallucination_probability)
                .with_correct(label == Label::Fact),
        );
    }
    let eval = halluguard::classifier::evaluate_scores(&scores, &labels, config.threshold)?;
    fs::create_dir_all(&args.out_dir).map_err(AppError::io(&args.out_dir))?;

    let roc = args.out_dir.join("roc.csv");
    write_roc_csv(&eval.roc, &roc).map_err(AppError::io(&roc))?;

    let bins = args.percentiles.unwrap_or(config.plan.bins);
    let table = accuracy_by_bin(&items, bins)?;
    let pct = args.out_dir.join("percentiles.csv");
    let mut w = BufWriter::new(File::create(&pct).map_err(AppError::io(&pct))?);
    write_bin_csv(&table, &mut w).map_err(AppError::io(&pct))?;
    drop(w);

    let mut explained = None;
    if let Some(fpath) = &args.features {
        let vectors = read_feature_corpus(fpath)?;
        let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
        let pca = pca_rows(&rows, 2)?;
        let out = args.out_dir.join("pca.csv");
        let mut body = String::from("answer_id,label,pc1,pc2\n");
        for (v, c) in vectors.iter().zip(&pca.coordinates) {
            let label = v.label.map_or("", Label::as_str);
            let _ = writeln!(body, "{},{label},{},{}", v.answer_id, c[0], c[1]);
        }
        fs::write(&out, body).map_err(AppError::io(&out))?;
        explained = Some(pca.explained_variance_ratio);
    }

    let summary = ReportSummary {
        config_hash: config.hash(),
        n: eval.n,
        auc: eval.hallucination_auc(),
        accuracy: eval.accuracy,
        threshold: config.threshold,
        bins,
        explained_variance_ratio: explained,
    };
    write_json(&args.out_dir.join("summary.json"), &summary)?;
    Ok(format!(
        "AUC {:.4}, accuracy {:.4}, {} percentile bins written to {}",
        summary.auc,
        summary.accuracy,
        table.len(),
        args.out_dir.display()
    ))
}

pub fn review(config: &AppConfig, action: ReviewAction) -> Result<String> {
    let mut queue = ReviewQueue::open(&config.review.queue)?;
    match action {
        ReviewAction::List { pending } => {
            let mut out = String::new();
            let items: Vec<_> = if pending {
                queue.pending().collect()
            } else {
                queue.items().collect()
            };
            for item in items {
                out.push_str(&serde_json::to_string(item).expect("item serializes"));
                out.push('\n');
            }
            Ok(out)
        }
        ReviewAction::Resolve { item_id, label } => {
            let label: HumanLabel = label.parse().map_err(AppError::Usage)?;
            let record = queue.resolve(&item_id, label)?;
            Ok(format!(
                "resolved {} (answer {}) as {:?}",
                record.item_id, record.answer_id, record.human_label
            ))
        }
        ReviewAction::Merge { features, into } => {
            let source: BTreeMap<String, FeatureVector> = read_feature_corpus(&features)?
                .into_iter()
                .map(|v| (v.answer_id.clone(), v))
                .collect();
            let target = read_feature_corpus(&into)?;
            let mut dataset = LabeledDataset::from_vectors(&target)?;
            let present: HashSet<String> =
                dataset.rows.iter().map(|r| r.answer_id.clone()).collect();
            let feedback: Vec<_> = queue
                .feedback()
                .into_iter()
                .filter(|f| !present.contains(&f.answer_id))
                .collect();
            let added = merge_feedback(&feedback, &source, &mut dataset)?;
            let mut merged = target;
            merged.extend(dataset.rows[dataset.rows.len() - added..].iter().map(|r| {
                FeatureVector {
                    answer_id: r.answer_id.clone(),
                    schema_id: dataset.schema_id.clone(),
                    label: Some(r.label),
                    values: r.values.clone(),
                    warnings: Vec::new(),
                }
            }));
            write_feature_corpus(&merged, &into)?;
            Ok(format!(
                "merged {added} reviewed answers into {}",
                into.display()
            ))
        }
    }
}
