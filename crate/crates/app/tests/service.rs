use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use halluguard::classifier::{
    train_stacking, BoostingParams, ForestParams, LabeledDataset, StackingConfig, TrainedModel,
};
use halluguard::features::{extract_corpus, schema_for_corpus, FeatureConfig, FeatureSpec};
use halluguard::ingest::standard_mixture;
use halluguard::trace::{trace_to_json, EnsembleTrace};
use halluguard_app::server::{router, ScoreResponse, ServiceState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    model: TrainedModel,
    factual: EnsembleTrace,
    confabulated: EnsembleTrace,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let traces = standard_mixture([40, 20, 20], 3, 10, 9).unwrap();
        let schema = schema_for_corpus(&traces).unwrap();
        let config = FeatureConfig::default();
        let vectors = extract_corpus(&traces, &schema, &config).unwrap();
        let ds = LabeledDataset::from_vectors(&vectors).unwrap();
        let stacking = StackingConfig {
            rf: ForestParams {
                n_trees: 30,
                ..ForestParams::default()
            },
            gbt: BoostingParams {
                n_estimators: 60,
                learning_rate: 0.1,
                ..BoostingParams::default()
            },
            cv_folds: 3,
            ..StackingConfig::default()
        };
        let model = train_stacking(&ds, &stacking)
            .unwrap()
            .with_feature_spec(FeatureSpec { schema, config })
            .unwrap();
        let fresh = standard_mixture([1, 0, 1], 3, 10, 777).unwrap();
        Fixture {
            model,
            factual: fresh[0].clone(),
            confabulated: fresh[1].clone(),
        }
    })
}

fn loaded() -> axum::Router {
    router(ServiceState::new(
        Some(fixture().model.clone()),
        Some("cafe".into()),
        0.5,
    ))
}

async fn call(
    app: axum::Router,
    method: &str,
    uri: &str,
    body: impl Into<Body>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn scores_bundled_traces() {
    let f = fixture();
    let (status, body) = call(loaded(), "POST", "/v1/score", trace_to_json(&f.factual)).await;
    assert_eq!(status, StatusCode::OK);
    let r: ScoreResponse = serde_json::from_value(body).unwrap();
    assert!(r.hallucination_probability < 0.5, "{r:?}");
    assert_eq!(r.schema_id, f.model.schema_id);

    let (status, body) = call(
        loaded(),
        "POST",
        "/v1/score",
        trace_to_json(&f.confabulated),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(
        body["hallucination_probability"].as_f64().unwrap() >= 0.5,
        "{body}"
    );
}

#[tokio::test]
async fn identical_bodies_get_identical_responses() {
    let line = trace_to_json(&fixture().factual);
    let a = call(loaded(), "POST", "/v1/score", line.clone()).await;
    let b = call(loaded(), "POST", "/v1/score", line).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn malformed_trace_is_400_with_field_path() {
    let mut v: Value = serde_json::from_str(&trace_to_json(&fixture().factual)).unwrap();
    v["models"][0]["steps"][0]["rank"] = json!("first");
    let (status, body) = call(loaded(), "POST", "/v1/score", v.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        body["error"]
            .as_str()
            .unwrap()
            .contains("models[0].steps[0].rank"),
        "{body}"
    );

    let (status, _) = call(loaded(), "POST", "/v1/score", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn schema_mismatch_is_422() {
    // two models instead of the three the schema expects
    let other = standard_mixture([1, 0, 0], 2, 10, 5).unwrap();
    let (status, body) = call(loaded(), "POST", "/v1/score", trace_to_json(&other[0])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
}

#[tokio::test]
async fn no_model_is_503() {
    let app = router(ServiceState::new(None, None, 0.5));
    let (status, _) = call(
        app.clone(),
        "POST",
        "/v1/score",
        trace_to_json(&fixture().factual),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = call(app.clone(), "GET", "/healthz", Body::empty()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "degraded");
    // arbitration needs no model
    let (status, _) = call(
        app,
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact","clf_probability":0.1}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn health_reports_model() {
    let (status, body) = call(loaded(), "GET", "/healthz", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["model_hash"], "cafe");
    assert_eq!(body["schema_id"], fixture().model.schema_id.as_str());
}

#[tokio::test]
async fn arbitrate_golden_requests() {
    let (status, body) = call(
        loaded(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact","clf_probability":0.9}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["final_status"], "EscalatedLogicSuspect");
    assert_eq!(body["escalate"], true);

    let (status, body) = call(
        loaded(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Hallucination","clf_probability":0.5,"threshold":0.5}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["final_status"], "FlaggedHallucination");
    assert_eq!(
        body["regenerate"]["action"],
        "regenerate_with_verified_context"
    );

    let (status, body) = call(
        loaded(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        body["error"].as_str().unwrap().contains("clf_probability"),
        "{body}"
    );

    let (status, body) = call(
        loaded(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Maybe","clf_probability":0.2}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        body["error"].as_str().unwrap().contains("db_category"),
        "{body}"
    );

    let (status, _) = call(
        loaded(),
        "POST",
        "/v1/arbitrate",
        r#"{"db_category":"Fact","clf_probability":1.5}"#,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
