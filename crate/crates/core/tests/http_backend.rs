//! HTTP completion and embedding clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::{self, JoinHandle};

use serde_json::json;

use goalplan::grounding::{EmbeddingProvider, HttpEmbeddings};
use goalplan::proposer::{BackendError, CompletionBackend, CompletionRequest, HttpBackend, HttpBackendConfig};

struct Seen {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Answers one connection per scripted `(status, body)` and returns what it received.
fn serve(script: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(Seen { headers, body: serde_json::from_slice(&buf).unwrap_or(json!(null)) });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"index": 0, "text": text, "logprobs": {
        "tokens": [text], "token_logprobs": [-0.2], "top_logprobs": [{"YES": -0.2, "NO": -1.8}]}}]})
    .to_string()
}

fn config(url: String) -> HttpBackendConfig {
    HttpBackendConfig { url, model: "test-model".into(), api_key: Some("secret".into()), retry_backoff_ms: 1, ..HttpBackendConfig::default() }
}

fn request() -> CompletionRequest {
    CompletionRequest { prompt: "Goal: x\nAnswer:".into(), n: 2, temperature: 0.8, max_tokens: 24, logprobs: 5, stop: vec![], seed: Some(3) }
}

#[test]
fn probe_then_request_with_retry_on_server_error() {
    let (url, server) = serve(vec![(200, completion("YES")), (503, "{}".into()), (200, completion("pour gas"))]);
    let backend = HttpBackend::connect(config(url)).unwrap();
    assert!(backend.supports_logprobs());
    let response = backend.complete(&request()).unwrap();
    assert_eq!(response.choices[0].text, "pour gas");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 3);
    let last = &seen[2];
    assert_eq!(last.body["model"], "test-model");
    assert_eq!(last.body["n"], 2);
    assert_eq!(last.body["seed"], 3);
    assert!(last.headers.iter().any(|h| h == "Authorization: Bearer secret" || h == "authorization: Bearer secret"));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(400, "{\"error\": \"bad prompt\"}".into())]);
    let backend = HttpBackend::new(config(url));
    match backend.complete(&request()) {
        Err(BackendError::Transport { retriable: false, message }) => assert!(message.contains("400")),
        other => panic!("expected a terminal transport error, got {other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn servers_without_logprobs_are_refused() {
    let body = json!({"choices": [{"index": 0, "text": "YES"}]}).to_string();
    let (url, server) = serve(vec![(200, body)]);
    assert!(matches!(HttpBackend::connect(config(url)), Err(BackendError::Capability(_))));
    server.join().unwrap();
}

#[test]
fn embeddings_round_trip_and_count_check() {
    let (url, server) = serve(vec![
        (200, json!({"vectors": [[1.0, 0.0], [0.0, 1.0]]}).to_string()),
        (200, json!({"vectors": [[1.0, 0.0]]}).to_string()),
    ]);
    let client = HttpEmbeddings::new(url, None);
    let texts = vec!["pour gas".to_string(), "open the cap".to_string()];
    assert_eq!(client.embed(&texts).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert!(client.embed(&texts).is_err());
    let seen = server.join().unwrap();
    assert_eq!(seen[0].body["texts"][1], "open the cap");
}
