use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use gramwb::workbench::{Config, Service};
use gramwb_cli::server::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn demo(file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file).display().to_string()
}

struct Api {
    app: axum::Router,
}

impl Api {
    fn new(config: Config) -> Self {
        Api { app: router(Arc::new(Service::new(config))) }
    }

    async fn raw(&self, method: Method, uri: &str, body: &str) -> (StatusCode, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn post(&self, op: &str, body: Value) -> (StatusCode, Value) {
        let (s, text) = self.raw(Method::POST, &format!("/api/v1/{op}"), &body.to_string()).await;
        (s, serde_json::from_str(&text).unwrap())
    }

    async fn get(&self, path_and_query: &str) -> (StatusCode, Value) {
        let (s, text) = self.raw(Method::GET, &format!("/api/v1/{path_and_query}"), "").await;
        (s, serde_json::from_str(&text).unwrap())
    }

    async fn load_demo(&self, grammar: &str) -> String {
        let (s, v) = self
            .post(
                "load-grammar",
                json!({ "grammar_path": demo(grammar), "lexicon_path": demo("demo.lex"), "rules_path": demo("demo.ifr") }),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }
}

#[tokio::test]
async fn load_grammar_with_rule_one_reports_undefined_categories() {
    let api = Api::new(Config::default());
    let (s, v) = api.post("load-grammar", json!({ "grammar": "(1) S -> NP[X], VP[X] | X = [kas=nom].\n" })).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["session_id"].is_string() && v["fingerprint"].is_string());
    let text = v["checks"].to_string();
    assert!(text.contains("\"NP\"") && text.contains("\"VP\""), "{text}");
}

#[tokio::test]
async fn parse_then_chart_lists_edges_in_id_order() {
    let api = Api::new(Config::default());
    let sid = api.load_demo("paper.idlp").await;
    let (s, v) = api.post("parse", json!({ "session_id": sid, "sentence": "der Hund schläft" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["parse"]["reading_count"], 1);
    assert_eq!(v["session_id"], sid.as_str());
    let (s, chart) = api.get(&format!("chart?session_id={sid}")).await;
    assert_eq!(s, StatusCode::OK, "{chart}");
    let ids: Vec<u64> = chart["edges"].as_array().unwrap().iter().map(|e| e["id"].as_u64().unwrap()).collect();
    assert!(!ids.is_empty());
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(chart["fingerprint"], v["fingerprint"]);

    let (_, filtered) = api.get(&format!("chart?session_id={sid}&labels=NP,VP&parse_id=1")).await;
    let labels: Vec<&str> =
        filtered["edges"].as_array().unwrap().iter().map(|e| e["label"].as_str().unwrap()).collect();
    assert!(!labels.is_empty() && labels.iter().all(|l| *l == "NP" || *l == "VP"), "{labels:?}");
}

#[tokio::test]
async fn structured_errors() {
    let api = Api::new(Config::default());
    let (s, v) = api.raw(Method::POST, "/api/v1/parse", "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&v).unwrap();
    assert_eq!(v["error"]["code"], "bad_request");
    let (s, v) = api.post("parse", json!({ "session_id": "s-missing", "sentence": "x" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "session_not_found");
    let (s, v) = api.post("parse", json!({ "session_id": "x", "sentence": "x", "colour": 1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    let (s, v) = api.post("no-such-op", json!({})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_operation");
    let (s, v) = api.get("parse?session_id=x").await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(v["error"]["code"], "method_not_allowed");
}

#[tokio::test]
async fn sessions_can_be_created_and_closed() {
    let api = Api::new(Config::default());
    let (s, v) = api.post("sessions", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    let sid = v["session_id"].as_str().unwrap().to_string();
    let (s, _) = api.raw(Method::DELETE, &format!("/api/v1/sessions/{sid}"), "").await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = api.post("check", json!({ "session_id": sid })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn grammar_index_and_fragments() {
    let api = Api::new(Config::default());
    let sid = api.load_demo("paper.idlp").await;
    let (s, v) = api.get(&format!("grammar-index?session_id={sid}&symbol=NP")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["entry"]["defined_by"][0]["label"], "2");
    assert_eq!(v["entry"]["referenced_by"][0]["label"], "1");
    api.post("parse", json!({ "session_id": sid, "sentence": "Hund der schläft" })).await;
    let (s, v) = api.get(&format!("fragments?session_id={sid}")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v["text"].as_str().unwrap().starts_with("fragments: "));
}

#[tokio::test]
async fn suite_stream_sends_progress_before_the_table() {
    let store = tempfile::tempdir().unwrap();
    let api = Api::new(Config { store_dir: store.path().to_path_buf(), ..Config::default() });
    let sid = api.load_demo("german.idlp").await;
    let body = json!({ "session_id": sid, "suite": demo("suite") }).to_string();
    let (s, text) = api.raw(Method::POST, "/api/v1/suite-run/stream", &body).await;
    assert_eq!(s, StatusCode::OK);
    let events: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("event: ")).collect();
    assert_eq!(events.len(), 41, "{text}");
    assert!(events[..40].iter().all(|e| *e == "progress"));
    assert_eq!(events[40], "result");
    let result: Value = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .next_back()
        .map(|d| serde_json::from_str(d).unwrap())
        .unwrap();
    assert_eq!(result["table"]["totals"]["pass"], 40);
    assert_eq!(result["session_id"], sid.as_str());

    let (s, v) = api.post("baseline/save", json!({ "session_id": sid, "sentence": "der Hund schläft" })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = api.post("baseline/compare", json!({ "session_id": sid, "sentence": "der Hund schläft" })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["verdict"], "equal");
}
