use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nbi_core::gateway::{CompletionRequest, GatewayError, Provider};
use nbi_service::config::GatewayConfig;
use nbi_service::provider::LiveProvider;
use serde_json::{json, Value};

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    active: AtomicUsize,
    peak: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<String>>,
}

/// One-request-per-connection mock. `respond(n)` gives the status and body
/// for the n-th request (0-based).
fn mock(delay: Duration, respond: impl Fn(usize) -> (u16, String) + Send + Sync + 'static) -> (String, Arc<Stats>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let stats = Arc::new(Stats::default());
    let respond = Arc::new(respond);
    let st = stats.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (st, respond) = (st.clone(), respond.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if let Some(v) = lower.strip_prefix("authorization:") {
                        st.auth.lock().unwrap().push(v.trim().to_string());
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                st.bodies.lock().unwrap().push(serde_json::from_slice(&body).unwrap_or(Value::Null));
                let n = st.requests.fetch_add(1, Ordering::SeqCst);
                let now = st.active.fetch_add(1, Ordering::SeqCst) + 1;
                st.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(delay);
                let (status, text) = respond(n);
                st.active.fetch_sub(1, Ordering::SeqCst);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            });
        }
    });
    (base, stats)
}

fn chat(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"prompt_tokens": 11, "completion_tokens": 3}})
        .to_string()
}

fn cfg() -> GatewayConfig {
    GatewayConfig { retries: 3, timeout_ms: 5_000, ..GatewayConfig::default() }
}

#[test]
fn completion_parses_text_and_usage() {
    let (base, stats) = mock(Duration::ZERO, |_| (200, chat("hello")));
    let p = LiveProvider::new(&base, Some("k1".into()), &cfg());
    let out = p.complete(&CompletionRequest::new("t", "say hi").with_schema("plan")).unwrap();
    assert_eq!(out.text, "hello");
    assert_eq!((out.prompt_tokens, out.completion_tokens), (11, 3));
    let body = stats.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["messages"][0]["content"], "say hi");
    assert_eq!(body["response_format"]["type"], "json_object");
    assert_eq!(body["model"], "gpt-4o");
    assert_eq!(stats.auth.lock().unwrap().as_slice(), ["bearer k1"]);
}

#[test]
fn transient_failures_are_retried() {
    let (base, stats) = mock(Duration::ZERO, |n| if n < 2 { (503, "{}".into()) } else { (200, chat("ok")) });
    let p = LiveProvider::new(&base, None, &cfg()).with_backoff(Duration::from_millis(1));
    assert_eq!(p.complete(&CompletionRequest::new("t", "x")).unwrap().text, "ok");
    assert_eq!(stats.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_stop_at_the_configured_count() {
    let (base, stats) = mock(Duration::ZERO, |_| (429, "{}".into()));
    let p = LiveProvider::new(&base, None, &cfg()).with_backoff(Duration::from_millis(1));
    let err = p.complete(&CompletionRequest::new("t", "x")).unwrap_err();
    assert!(matches!(err, GatewayError::Provider(ref m) if m.contains("429")), "{err}");
    assert_eq!(stats.requests.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, stats) = mock(Duration::ZERO, |_| (400, r#"{"error":"bad"}"#.into()));
    let p = LiveProvider::new(&base, None, &cfg()).with_backoff(Duration::from_millis(1));
    let err = p.complete(&CompletionRequest::new("t", "x")).unwrap_err();
    assert!(err.to_string().contains("400"), "{err}");
    assert_eq!(stats.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn in_flight_requests_are_bounded() {
    let (base, stats) = mock(Duration::from_millis(80), |_| (200, chat("ok")));
    let p = Arc::new(LiveProvider::new(&base, None, &GatewayConfig { max_in_flight: 2, ..cfg() }));
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let p = p.clone();
            std::thread::spawn(move || p.complete(&CompletionRequest::new("t", format!("q{i}"))).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(stats.requests.load(Ordering::SeqCst), 6);
    assert_eq!(stats.peak.load(Ordering::SeqCst), 2);
}

#[test]
fn timeouts_surface_as_timeout_errors() {
    let (base, _) = mock(Duration::from_millis(600), |_| (200, chat("late")));
    let p = LiveProvider::new(&base, None, &GatewayConfig { retries: 1, timeout_ms: 100, ..cfg() })
        .with_backoff(Duration::from_millis(1));
    let err = p.complete(&CompletionRequest::new("t", "x")).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout(100)), "{err}");
}

#[test]
fn embeddings_use_the_endpoint_only_when_a_model_is_set() {
    let (base, stats) = mock(Duration::ZERO, |_| (200, json!({"data": [{"embedding": [0.5, 0.25]}]}).to_string()));
    let local = LiveProvider::new(&base, None, &cfg());
    assert!(!local.embed("revenue").unwrap().is_empty());
    assert_eq!(stats.requests.load(Ordering::SeqCst), 0);

    let remote = LiveProvider::new(&base, None, &GatewayConfig { embedding_model: Some("emb".into()), ..cfg() });
    assert_eq!(remote.embed("revenue").unwrap(), vec![0.5, 0.25]);
    assert_eq!(stats.bodies.lock().unwrap()[0]["model"], "emb");
}

#[test]
fn missing_endpoint_variable_is_reported() {
    let c = GatewayConfig { endpoint_env: "NBI_TEST_UNSET_ENDPOINT".into(), ..cfg() };
    let err = LiveProvider::from_env(&c).err().unwrap();
    assert!(err.to_string().contains("NBI_TEST_UNSET_ENDPOINT"));
}
