//! The chat-completions client against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use faithgen::corpus::Polarity;
use faithgen::generation::{
    ChatApiBackend, Completer, GenerationError, GenerationParams, ManualClock, RetryPolicy,
};
use faithgen::prompting::{render_prompt, PromptInstance, Strategy, StrategySpec};

/// Serves one scripted `(status, body)` per connection and records each
/// request body.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut req = vec![0; content_length];
            reader.read_exact(&mut req).unwrap();
            log.lock().unwrap().push(String::from_utf8(req).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn prompt() -> PromptInstance {
    render_prompt(&StrategySpec {
        strategy: Strategy::Simple,
        polarity: Polarity::PositiveConstruct,
        n_generations: 2,
        grounding_example: None,
        taxonomy: None,
        construct_name: "sarcastic".into(),
    })
    .unwrap()
}

fn completer(endpoint: &str) -> Completer {
    let backend = ChatApiBackend::new(endpoint, "test-model", "sk-test".into(), Duration::from_secs(5));
    Completer::new(Box::new(backend), GenerationParams::default())
        .with_retry(RetryPolicy::default())
        .with_clock(Arc::new(ManualClock::new()))
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"1. Oh great.\n2. Lovely."},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":7}}"#;

#[test]
fn retries_server_errors_then_succeeds() {
    let (endpoint, seen) = serve(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, OK_BODY.into()),
    ]);
    let c = completer(&endpoint).complete(&prompt()).unwrap();
    assert_eq!(c.attempts, 3);
    assert_eq!(c.raw_text, "1. Oh great.\n2. Lovely.");
    assert_eq!(c.provider_metadata.prompt_tokens, 12);
    assert_eq!(c.provider_metadata.finish_reason.as_deref(), Some("stop"));
    assert!(!c.refusal);

    let requests = seen.lock().unwrap();
    assert_eq!(requests.len(), 3);
    let body: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["frequency_penalty"], 0.5);
    assert_eq!(body["presence_penalty"], 0.4);
    assert_eq!(body["max_tokens"], 700);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn unauthorized_is_fatal_without_retry() {
    let (endpoint, seen) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let err = completer(&endpoint).complete(&prompt()).unwrap_err();
    assert!(matches!(err, GenerationError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn bad_request_is_not_retried() {
    let (endpoint, seen) = serve(vec![(400, r#"{"error":"nope"}"#.into())]);
    let err = completer(&endpoint).complete(&prompt()).unwrap_err();
    assert!(matches!(err, GenerationError::Request(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}
