#[path = "../../core/tests/support/da_fixture.rs"]
mod da_fixture;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use mtpipe_core::corpus::{Corpus, LoadOptions, SegmentPair};
use mtpipe_core::humaneval::{aggregate_da, DAConfig, Survey, SurveyBatch};
use mtpipe_core::synth::{BackendError, FnBackend, TranslationBackend};
use mtpipe_core::trainpipe::{ToyModel, ToyTranslator};
use mtpipe_serve::{router, AppState, PESegment, PETask, ServeConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Down;

impl TranslationBackend for Down {
    fn id(&self) -> &str {
        "down"
    }

    fn translate_batch(&self, _: &[String], _: &str, _: &str) -> Result<Vec<Option<String>>, BackendError> {
        Err(BackendError("connection refused".into()))
    }
}

fn batch() -> SurveyBatch {
    let strings = da_fixture::strings();
    SurveyBatch {
        batch_id: "da-1".into(),
        seed: 0,
        surveys: vec![Survey {
            id: "survey-1".into(),
            string_ids: strings.iter().map(|s| s.id.clone()).collect(),
            raters: vec!["rater-a".into(), "rater-b".into()],
        }],
        strings,
    }
}

fn task() -> PETask {
    PETask {
        id: "pe-1".into(),
        segments: vec![
            PESegment {
                source: "Osha mikono yako.".into(),
                mt: "Lavez vos mains avec savon".into(),
            },
            PESegment {
                source: "Kaa nyumbani.".into(),
                mt: "Restez chez vous".into(),
            },
        ],
        raters: vec![],
    }
}

fn state(store: &Path) -> Arc<AppState> {
    let o = LoadOptions::new("swc", Some("fra"), "toy", "general");
    let toy = ToyTranslator {
        id: "toy-swc-fra".into(),
        model: ToyModel::fit(&Corpus::new("toy", vec![SegmentPair::new("a", "x", &o)])),
    };
    let mut directions: BTreeMap<(String, String), Arc<dyn TranslationBackend>> = BTreeMap::new();
    directions.insert(("swc".into(), "fra".into()), Arc::new(toy));
    directions.insert(("fra".into(), "swc".into()), Arc::new(Down));
    directions.insert(("swc".into(), "eng".into()), Arc::new(FnBackend::new("nothing", |_: &str| None)));
    let raters = BTreeMap::from([
        ("tok-a".to_string(), "rater-a".to_string()),
        ("tok-b".to_string(), "rater-b".to_string()),
        ("tok-c".to_string(), "rater-c".to_string()),
    ]);
    Arc::new(AppState::new(directions, raters, vec![batch()], vec![task()], DAConfig::default(), store).unwrap())
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn translate_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let (st, body) = call(&s, "POST", "/api/translate", None, Some(json!({"text": "a", "src": "swc", "tgt": "fra"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body), json!({"translation": "x", "backend_id": "toy-swc-fra"}));

    let (st, body) = call(&s, "POST", "/api/translate", None, Some(json!({"text": "", "src": "swc", "tgt": "fra"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body)["translation"], "");

    let (st, _) = call(&s, "POST", "/api/translate", None, Some(json!({"text": "a", "src": "fra", "tgt": "eng"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let req = Request::post("/api/translate")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(json!({"text": "a", "src": "fra", "tgt": "swc"}).to_string()))
        .unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_GATEWAY);
    assert_eq!(resp.headers()[header::RETRY_AFTER], "5");

    let (st, _) = call(&s, "POST", "/api/translate", None, Some(json!({"text": "a", "src": "swc", "tgt": "eng"}))).await;
    assert_eq!(st, StatusCode::BAD_GATEWAY);
}

#[tokio::test]
async fn survey_submission_rules() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let (st, body) = call(&s, "GET", "/api/surveys/survey-1", None, None).await;
    assert_eq!(st, StatusCode::OK);
    let view = json_of(&body);
    assert_eq!(view["items"].as_array().unwrap().len(), 10);
    assert!(view["items"][0].get("lingala_flag").is_none());

    let (st, _) = call(&s, "GET", "/api/surveys/survey-9", None, None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let ok = json!({"string_id": "s4", "q1": "yes", "q2": 6});
    let uri = "/api/surveys/survey-1/responses";
    let (st, body) = call(&s, "POST", uri, Some("tok-a"), Some(ok.clone())).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body), json!({"accepted": true, "sequence": 1}));
    let (st, _) = call(&s, "POST", uri, Some("tok-a"), Some(ok.clone())).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&s, "POST", uri, Some("tok-c"), Some(ok.clone())).await;
    assert_eq!(st, StatusCode::FORBIDDEN);
    let (st, _) = call(&s, "POST", uri, None, Some(ok.clone())).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&s, "POST", "/api/surveys/nope/responses", Some("tok-a"), Some(ok)).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    for bad in [
        json!({"string_id": "s5", "q1": "yes", "q2": 11}),
        json!({"string_id": "s5", "q1": "yes", "q2": 3}),
        json!({"string_id": "s5", "q1": "yes", "q2": 3, "q3": "  "}),
        json!({"string_id": "zzz", "q1": "yes", "q2": 8}),
    ] {
        let (st, _) = call(&s, "POST", uri, Some("tok-b"), Some(bad.clone())).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let (st, _) = call(&s, "POST", uri, Some("tok-b"), Some(json!({"string_id": "s5", "q1": "yes", "q2": 3, "q3": "haieleweki"}))).await;
    assert_eq!(st, StatusCode::OK);
}

#[tokio::test]
async fn post_edit_flow() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let (st, body) = call(&s, "GET", "/api/pe/tasks/pe-1", None, None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body)["segments"].as_array().unwrap().len(), 2);

    let (st, _) = call(&s, "GET", "/api/reports/pe/pe-1", None, None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let uri = "/api/pe/tasks/pe-1/segments/0";
    let (st, body) = call(&s, "POST", uri, Some("tok-a"), Some(json!({"post_edited": "Lavez vos mains au savon"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert!((json_of(&body)["hter_so_far"].as_f64().unwrap() - 0.2).abs() < 1e-12);

    let (st, body) = call(&s, "POST", uri, Some("tok-a"), Some(json!({"post_edited": "Lavez vos mains avec savon"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body)["hter_so_far"].as_f64().unwrap(), 0.0);

    let (st, _) = call(&s, "POST", "/api/pe/tasks/pe-1/segments/2", Some("tok-a"), Some(json!({"post_edited": "x"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&s, "POST", "/api/pe/tasks/pe-9/segments/0", Some("tok-a"), Some(json!({"post_edited": "x"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&s, "POST", uri, Some("tok-a"), Some(json!({"post_edited": "   "}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let (st, _) = call(&s, "POST", "/api/pe/tasks/pe-1/segments/1", Some("tok-a"), Some(json!({"post_edited": "Restez à la maison"}))).await;
    assert_eq!(st, StatusCode::OK);
    let (st, body) = call(&s, "GET", "/api/reports/pe/pe-1", None, None).await;
    assert_eq!(st, StatusCode::OK);
    let report = json_of(&body);
    assert_eq!(report["complete"], true);
    for metric in ["bleu", "chrf", "ter"] {
        assert!(report["report"][metric]["score"].is_number(), "{metric}");
    }
    let (st, body) = call(&s, "GET", "/api/pe/tasks/pe-1", None, None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body)["segments"][0]["post_edited"], "Lavez vos mains avec savon");
}

#[tokio::test]
async fn empty_batch_report_and_unknown_batch() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let (st, body) = call(&s, "GET", "/api/reports/da/da-1", None, None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json_of(&body)["report"]["n_included"], 0);
    let (st, _) = call(&s, "GET", "/api/reports/da/other", None, None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn replayed_store_reproduces_reports_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let tokens = BTreeMap::from([("rater-a", "tok-a"), ("rater-b", "tok-b")]);
    for r in da_fixture::responses() {
        let body = json!({"string_id": r.string_id, "q1": r.q1, "q2": r.q2, "q3": r.q3});
        let (st, _) = call(&s, "POST", "/api/surveys/survey-1/responses", Some(tokens[r.rater_id.as_str()]), Some(body)).await;
        assert_eq!(st, StatusCode::OK);
    }
    for (n, text) in [(0, "Lavez vos mains au savon"), (1, "Restez à la maison"), (0, "Lavez-vous les mains au savon")] {
        let uri = format!("/api/pe/tasks/pe-1/segments/{n}");
        let (st, _) = call(&s, "POST", &uri, Some("tok-b"), Some(json!({ "post_edited": text }))).await;
        assert_eq!(st, StatusCode::OK);
    }

    let (_, da_live) = call(&s, "GET", "/api/reports/da/da-1", None, None).await;
    let (_, pe_live) = call(&s, "GET", "/api/reports/pe/pe-1", None, None).await;

    let (strings, expected) = aggregate_da(&da_fixture::responses(), &da_fixture::strings(), DAConfig::default()).unwrap();
    let live = json_of(&da_live);
    assert_eq!(live["report"], serde_json::to_value(&expected).unwrap());
    assert_eq!(live["strings"], serde_json::to_value(&strings).unwrap());
    assert_eq!(live["report"]["q2_mean"].as_f64().unwrap(), da_fixture::MEAN);

    drop(s);
    let replayed = state(dir.path());
    let (_, da_replayed) = call(&replayed, "GET", "/api/reports/da/da-1", None, None).await;
    let (_, pe_replayed) = call(&replayed, "GET", "/api/reports/pe/pe-1", None, None).await;
    assert_eq!(da_live, da_replayed);
    assert_eq!(pe_live, pe_replayed);

    let (st, _) = call(&replayed, "POST", "/api/surveys/survey-1/responses", Some("tok-a"), Some(json!({"string_id": "s4", "q1": "yes", "q2": 6}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_submissions_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let mut handles = Vec::new();
    for _ in 0..8 {
        let s = s.clone();
        handles.push(tokio::spawn(async move {
            call(&s, "POST", "/api/surveys/survey-1/responses", Some("tok-a"), Some(json!({"string_id": "s6", "q1": "yes", "q2": 9}))).await.0
        }));
    }
    let mut statuses = Vec::new();
    for h in handles {
        statuses.push(h.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|&&s| s == StatusCode::OK).count(), 1);
    assert_eq!(statuses.iter().filter(|&&s| s == StatusCode::CONFLICT).count(), 7);
}

#[test]
fn config_file_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let model = ToyModel::fit(&Corpus::new(
        "t",
        vec![SegmentPair::new("a", "x", &LoadOptions::new("swc", Some("fra"), "t", "general"))],
    ));
    model.save(&dir.path().join("model.json")).unwrap();
    std::fs::write(dir.path().join("batch.json"), serde_json::to_string(&batch()).unwrap()).unwrap();
    std::fs::write(dir.path().join("task.json"), serde_json::to_string(&task()).unwrap()).unwrap();
    let cfg_path = dir.path().join("serve.toml");
    std::fs::write(
        &cfg_path,
        r#"
bind = "127.0.0.1:9999"
store_dir = "store"
survey_batches = ["batch.json"]
pe_tasks = ["task.json"]

[[backends]]
kind = "toy"
id = "toy-swc-fra"
model = "model.json"

[[directions]]
src = "swc"
tgt = "fra"
backend = "toy-swc-fra"

[raters]
tok-a = "rater-a"
"#,
    )
    .unwrap();
    let cfg = ServeConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.store_dir, dir.path().join("store"));
    AppState::from_config(&cfg).unwrap();

    std::env::set_var(mtpipe_serve::ENV_BIND, "0.0.0.0:1234");
    std::env::set_var(mtpipe_serve::ENV_STORE, "/tmp/elsewhere");
    let cfg = cfg.with_env_overrides();
    std::env::remove_var(mtpipe_serve::ENV_BIND);
    std::env::remove_var(mtpipe_serve::ENV_STORE);
    assert_eq!(cfg.bind, "0.0.0.0:1234");
    assert_eq!(cfg.store_dir, Path::new("/tmp/elsewhere"));

    let mut bad = ServeConfig::load(&cfg_path).unwrap();
    bad.directions[0].backend = "missing".into();
    assert!(AppState::from_config(&bad).err().unwrap().to_string().contains("missing"));
}
