use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use dots::files::{load_bank, write_json};
use dots::monitor_host::state_path;
use dots::service::{router, AppState, TokenScope};
use dots::sessions::SessionRegistry;
use dots::store::{Namespace, RunDraft, RunKind, RunStore};
use dots_core::clock::ManualClock;
use dots_core::dialogue::{SimulationLimits, Transcript};
use dots_core::evaluator::NoJudge;
use dots_core::monitor::{EscalationState, Monitor, MonitorConfig, ProbeTarget, ScheduleConfig, TrapEntry, VersionState};
use dots_core::pipeline::score_transcript;
use dots_core::scoring::DotsRecord;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn demo_bank() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/bank")
}

fn app(store: &RunStore, tokens: Vec<TokenScope>) -> Router {
    let clock = Arc::new(ManualClock::with_step(1_700_000_000_000, 1_000));
    let bank = Arc::new(load_bank(&demo_bank()).unwrap());
    let sessions = SessionRegistry::new(bank, store.clone(), SimulationLimits::default(), clock.clone());
    router(Arc::new(AppState { store: store.clone(), sessions: Some(sessions), tokens, clock }))
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&RunStore::open(dir.path()).unwrap(), vec![]);
    let (status, body) = call(&app, "GET", "/healthz", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let (status, body) = call(&app, "GET", "/nope", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

/// A human consultation through the API scores exactly as the offline
/// pipeline scores the same stored transcript.
#[tokio::test]
async fn session_scores_match_offline_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let app = app(&store, vec![]);

    let (status, opened) = call(&app, "POST", "/sessions", None, Some(json!({"case_id": "im-uti-001", "seed": 3}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = opened["session_id"].as_str().unwrap().to_string();
    assert!(!opened["intro"].as_str().unwrap().is_empty());

    for q in ["When did it start?", "Do you have a fever or chills?", "Are you allergic to anything?", "Could you be pregnant?"] {
        let (status, reply) = call(&app, "POST", &format!("/sessions/{id}/message"), None, Some(json!({"text": q}))).await;
        assert_eq!(status, StatusCode::OK, "{reply}");
        assert!(!reply["reply"].as_str().unwrap().is_empty());
    }

    let recs = json!({
        "diagnoses": ["Acute cystitis"],
        "icd10": ["N30.0"],
        "differential": ["Pyelonephritis", "Urethritis"],
        "investigations": ["Urinalysis"],
        "treatments": ["Nitrofurantoin", "Increased fluid intake"],
    });
    let mut finalized = Value::Null;
    for _ in 0..3 {
        let (status, body) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None, Some(recs.clone())).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        if body["status"] == "complete" {
            finalized = body;
            break;
        }
    }
    assert_eq!(finalized["status"], "complete");
    let api_dots: DotsRecord = serde_json::from_value(finalized["dots"].clone()).unwrap();

    let (status, served) = call(&app, "GET", &format!("/runs/{id}/dots"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_value::<DotsRecord>(served).unwrap(), api_dots);

    let env = store.get(&id).unwrap();
    assert_eq!(env.kind, RunKind::HumanSession);
    let text = String::from_utf8(store.artifact(&env, "transcript").unwrap()).unwrap();
    let transcript = Transcript::from_jsonl(&text).unwrap();
    let case = load_bank(&demo_bank()).unwrap().get("im-uti-001").unwrap().clone();
    let (_, offline) = score_transcript(&transcript, &case, &mut NoJudge).unwrap();
    assert_eq!(offline, api_dots);
    assert_eq!(api_dots.diagnosis_accuracy, 100.0);

    // The session is gone once complete.
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/message"), None, Some(json!({"text": "hello"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_case_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&RunStore::open(dir.path()).unwrap(), vec![]);
    let (status, _) = call(&app, "POST", "/sessions", None, Some(json!({"case_id": "no-such-case"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn commit_dots(store: &RunStore, id: &str, ns: Namespace, value: f64, supersedes: Option<&str>) {
    let dots = DotsRecord { diagnosis_accuracy: value, ..DotsRecord::zeroed() };
    let mut draft = RunDraft::new(id, RunKind::Simulation, ns, "m1", 10).case("im-uti-001").json_artifact("dots", &dots);
    if let Some(s) = supersedes {
        draft = draft.supersedes(s);
    }
    store.commit(draft).unwrap();
}

#[tokio::test]
async fn runs_follow_corrections() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let app = app(&store, vec![]);
    commit_dots(&store, "r1", Namespace::Evaluation, 0.0, None);
    commit_dots(&store, "r1.eval1", Namespace::Evaluation, 100.0, Some("r1"));

    let (status, dots) = call(&app, "GET", "/runs/r1/dots", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dots["diagnosis_accuracy"], 100.0);
    let (_, runs) = call(&app, "GET", "/runs?kind=simulation&case_id=im-uti-001", None, None).await;
    assert_eq!(runs.as_array().unwrap().len(), 2);
    let (status, _) = call(&app, "GET", "/runs?kind=bogus", None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/runs/missing/dots", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn tokens_confine_callers_to_their_namespace() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let tokens = vec![
        TokenScope { token: "eval".into(), namespace: Some(Namespace::Evaluation) },
        TokenScope { token: "ops".into(), namespace: Some(Namespace::Monitoring) },
        TokenScope { token: "admin".into(), namespace: None },
    ];
    let app = app(&store, tokens);
    commit_dots(&store, "e1", Namespace::Evaluation, 50.0, None);
    commit_dots(&store, "p1", Namespace::Monitoring, 50.0, None);

    assert_eq!(call(&app, "GET", "/runs", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/runs", Some("wrong"), None).await.0, StatusCode::UNAUTHORIZED);

    let (_, runs) = call(&app, "GET", "/runs", Some("eval"), None).await;
    let ids: Vec<&str> = runs.as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["e1"]);
    assert_eq!(call(&app, "GET", "/runs?namespace=monitoring", Some("eval"), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(call(&app, "GET", "/runs/p1/dots", Some("eval"), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(call(&app, "GET", "/runs/p1/dots", Some("ops"), None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/runs", Some("admin"), None).await.1.as_array().unwrap().len(), 2);

    // Sessions belong to evaluation.
    let open = json!({"case_id": "im-uti-001"});
    assert_eq!(call(&app, "POST", "/sessions", Some("ops"), Some(open.clone())).await.0, StatusCode::FORBIDDEN);
    assert_eq!(call(&app, "POST", "/sessions", Some("eval"), Some(open)).await.0, StatusCode::CREATED);
}

#[tokio::test]
async fn gate_reads_the_persisted_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let app = app(&store, vec![]);

    let (status, open) = call(&app, "GET", "/gate/v1", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(open["decision"], "allow");
    assert_eq!(call(&app, "GET", "/metrics/windows?model=v1", None, None).await.0, StatusCode::NOT_FOUND);

    let schedule = ScheduleConfig::new(vec![TrapEntry::new("im-uti-001")], vec![ProbeTarget::new("v1"), ProbeTarget::new("v2")]);
    let mut monitor = Monitor::new(MonitorConfig::new(schedule), 0);
    monitor.state.versions.insert("v1".into(), VersionState { state: EscalationState::Blocked, ..VersionState::default() });
    write_json(&state_path(dir.path()), &monitor).unwrap();

    let (_, v1) = call(&app, "GET", "/gate/v1", None, None).await;
    assert_eq!((v1["decision"].as_str(), v1["state"].as_str()), (Some("deny"), Some("BLOCKED")));
    let (_, v2) = call(&app, "GET", "/gate/v2", None, None).await;
    assert_eq!(v2["decision"], "allow");
    let (status, windows) = call(&app, "GET", "/metrics/windows?model=v1&at=1000", None, None).await;
    assert_eq!(status, StatusCode::OK, "{windows}");
}
