use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use countseg_pipeline::counter::{count_objects, CounterClientConfig, CounterError, HttpCounter};
use countseg_pipeline::embed_http::{HttpEmbeddingConfig, HttpEmbeddingProvider};
use countseg_pipeline::mock::{MockResponse, MockServer};
use countseg_core::similarity::EmbeddingProvider;

fn image() -> tempfile::NamedTempFile {
    let f = tempfile::Builder::new().suffix(".png").tempfile().unwrap();
    std::fs::write(f.path(), b"\x89PNG fake").unwrap();
    f
}

fn config(server: &MockServer) -> CounterClientConfig {
    CounterClientConfig {
        endpoint: server.url("/v1/chat/completions"),
        model: "mock-model".into(),
        backoff_ms: 1,
        timeout_secs: 10.0,
        ..Default::default()
    }
}

#[test]
fn echo_fixture() {
    let server = MockServer::start(|_| MockResponse::chat(r#"{"airplane": 2, "ship": 0}"#, 120, 9));
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    let call = count_objects(&counter, "7", img.path(), "count things").unwrap();
    let pred = call.prediction.unwrap();
    assert_eq!(pred.counts.get("airplane"), Some(&2));
    assert!(!pred.counts.contains_key("ship"));
    assert_eq!(call.audit.parsed.as_ref().unwrap().get("ship"), Some(&0));
    assert_eq!(call.audit.usage.prompt_tokens, Some(120));
    assert_eq!(call.audit.raw_response, r#"{"airplane": 2, "ship": 0}"#);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let body = reqs[0].json();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["temperature"], 0.01);
    assert_eq!(body["top_p"], 1.0);
    assert_eq!(body["messages"][0]["content"][0]["text"], "count things");
    let url = body["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
    assert!(url.starts_with("data:image/png;base64,"));
}

#[test]
fn fenced_reply() {
    let server = MockServer::start(|_| MockResponse::chat("```json\n{\"airplane\": 2, \"ship\": 0}\n```", 1, 1));
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    let pred = count_objects(&counter, "a", img.path(), "p").unwrap().prediction.unwrap();
    assert_eq!(pred.counts.get("airplane"), Some(&2));
}

#[test]
fn unparseable_reply_keeps_raw_text() {
    let server = MockServer::start(|_| MockResponse::chat("no objects", 1, 1));
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    let call = count_objects(&counter, "a", img.path(), "p").unwrap();
    assert!(call.prediction.is_err());
    assert_eq!(call.audit.raw_response, "no objects");
    assert!(call.audit.parsed.is_none());
    assert_eq!(server.requests().len(), 1, "parse failures are not retried");
}

#[test]
fn server_errors_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let server = MockServer::start(move |_| {
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            MockResponse::status(503, "busy")
        } else {
            MockResponse::chat(r#"{"ship": 1}"#, 1, 1)
        }
    });
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    let pred = count_objects(&counter, "a", img.path(), "p").unwrap().prediction.unwrap();
    assert_eq!(pred.counts.get("ship"), Some(&1));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let server = MockServer::start(|_| MockResponse::status(500, "down"));
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    match count_objects(&counter, "a", img.path(), "p") {
        Err(CounterError::Status { status: 500, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_| MockResponse::status(401, "bad key"));
    let counter = HttpCounter::new(config(&server)).unwrap();
    let img = image();
    assert!(count_objects(&counter, "a", img.path(), "p").is_err());
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn unreachable_endpoint_names_it() {
    let cfg = CounterClientConfig {
        endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
        backoff_ms: 1,
        ..Default::default()
    };
    let counter = HttpCounter::new(cfg).unwrap();
    let img = image();
    let err = count_objects(&counter, "a", img.path(), "p").unwrap_err();
    assert!(err.is_remote());
    assert!(err.to_string().contains("127.0.0.1:9"), "{err}");
}

#[test]
fn api_key_comes_from_environment() {
    let server = MockServer::start(|_| MockResponse::chat("{}", 1, 1));
    let mut cfg = config(&server);
    cfg.api_key_env = Some("COUNTSEG_TEST_KEY_UNSET_7781".into());
    assert!(matches!(HttpCounter::new(cfg.clone()), Err(CounterError::Credential(_))));
    std::env::set_var("COUNTSEG_TEST_KEY_SET_7781", "sekret");
    cfg.api_key_env = Some("COUNTSEG_TEST_KEY_SET_7781".into());
    let counter = HttpCounter::new(cfg).unwrap();
    let img = image();
    count_objects(&counter, "a", img.path(), "p").unwrap();
    assert_eq!(server.requests()[0].header("authorization"), Some("Bearer sekret"));
}

#[test]
fn http_embeddings() {
    let server = MockServer::start(|req| {
        let n = req.json()["input"].as_array().map_or(0, |a| a.len());
        let data: Vec<_> = (0..n)
            .rev()
            .map(|i| serde_json::json!({"index": i, "embedding": [i as f64, 1.0]}))
            .collect();
        MockResponse::ok(serde_json::json!({"data": data}).to_string())
    });
    let p = HttpEmbeddingProvider::new(HttpEmbeddingConfig {
        endpoint: server.url("/v1/embeddings"),
        ..Default::default()
    })
    .unwrap();
    let out = p.embed(&["a".into(), "b".into(), "c".into()]).unwrap();
    assert_eq!(out[2].values(), &[2.0, 1.0]);
    assert_eq!(server.requests()[0].json()["input"][1], "b");
}
