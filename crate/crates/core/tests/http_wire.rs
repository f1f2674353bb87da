//! Wire-level tests against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use coa::actions::{DataSource, HttpDataSource, HttpSearch, HttpSearchSettings, SearchClient};
use coa::backends::{BackendError, ChatBackend, ChatParams, Embedder, HttpBackend, HttpSettings};
use coa::chain::ChatMessage;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    method: String,
    target: String,
    headers: Vec<(String, String)>,
    body: String,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap()
    }
}

/// Serves each request with the next canned `(status, body)` and records it.
struct Server {
    base: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

fn serve(responses: Vec<(u16, String)>) -> Server {
    serve_with(|_| responses)
}

/// Like [`serve`], but the responses may mention the server's own base URL.
fn serve_with(responses: impl FnOnce(&str) -> Vec<(u16, String)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let responses = responses(&base);
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut parts = line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let target = parts.next().unwrap_or_default().to_string();
            let mut headers = Vec::new();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut raw = vec![0; len];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Request { method, target, headers, body: String::from_utf8(raw).unwrap() });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    Server { base, requests }
}

fn backend(base: &str) -> HttpBackend {
    HttpBackend::new(HttpSettings {
        base_url: base.to_string(),
        api_key: Some("sk-test".into()),
        embedding_dim: 3,
        timeout: Duration::from_secs(5),
        initial_backoff: Duration::from_millis(1),
        ..HttpSettings::default()
    })
    .unwrap()
}

fn chat_reply(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn chat_request_shape_and_reply() {
    let server = serve(vec![(200, chat_reply("[Final Content] Paris"))]);
    let b = backend(&server.base);
    let params = ChatParams { temperature: 0.0, top_p: 1.0, max_tokens: 1000, seed: 1 };
    let reply = b.chat_complete(&[ChatMessage::system("sys"), ChatMessage::user("hi")], &params).unwrap();
    assert_eq!(reply, "[Final Content] Paris");
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!((r.method.as_str(), r.target.as_str()), ("POST", "/v1/chat/completions"));
    assert_eq!(r.header("authorization"), Some("Bearer sk-test"));
    let body = r.json();
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["messages"], json!([{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]));
    assert_eq!((body["temperature"].as_f64(), body["top_p"].as_f64()), (Some(0.0), Some(1.0)));
    assert_eq!((body["max_tokens"].as_u64(), body["seed"].as_u64()), (Some(1000), Some(1)));
    assert_eq!(ChatBackend::usage(&b).chat_calls, 1);
}

#[test]
fn embeddings_are_reassembled_by_index() {
    let body = json!({"data": [
        {"index": 1, "embedding": [0.0, 1.0, 0.0]},
        {"index": 0, "embedding": [1.0, 0.0, 0.0]}
    ]});
    let server = serve(vec![(200, body.to_string())]);
    let b = backend(&server.base);
    let v = b.embed_batch(&["a".into(), "b".into()]).unwrap();
    assert_eq!(v[0].values(), &[1.0, 0.0, 0.0]);
    assert_eq!(v[1].values(), &[0.0, 1.0, 0.0]);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].target, "/v1/embeddings");
    assert_eq!(reqs[0].json()["input"], json!(["a", "b"]));
    assert_eq!(reqs[0].json()["model"], "text-embedding-ada-002");
}

#[test]
fn wrong_embedding_dimension_is_malformed() {
    let body = json!({"data": [{"index": 0, "embedding": [1.0, 0.0]}]});
    let server = serve(vec![(200, body.to_string())]);
    assert!(matches!(backend(&server.base).embed_batch(&["a".into()]), Err(BackendError::Malformed(_))));
}

#[test]
fn client_errors_are_not_retried() {
    let err = json!({"error": {"message": "Incorrect API key provided"}}).to_string();
    let server = serve(vec![(401, err)]);
    let out = backend(&server.base).chat_complete(&[ChatMessage::user("hi")], &ChatParams::default());
    assert_eq!(out, Err(BackendError::Rejected { status: 401, message: "Incorrect API key provided".into() }));
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn transient_errors_are_retried() {
    let server = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, chat_reply("ok"))]);
    let out = backend(&server.base).chat_complete(&[ChatMessage::user("hi")], &ChatParams::default());
    assert_eq!(out.unwrap(), "ok");
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn persistent_server_errors_surface_after_all_attempts() {
    let server = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let out = backend(&server.base).chat_complete(&[ChatMessage::user("hi")], &ChatParams::default());
    assert!(matches!(out, Err(BackendError::Rejected { status: 500, .. })));
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn unreachable_server_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = backend(&format!("http://127.0.0.1:{port}")).chat_complete(&[ChatMessage::user("hi")], &ChatParams::default());
    assert!(matches!(out, Err(BackendError::Unavailable { attempts: 3, .. })));
}

#[test]
fn serp_search_and_page_fetch() {
    let page = "<html><head><script>var x = 1;</script></head><body><p>Ethereum &amp; Bitcoin</p></body></html>";
    let server = serve_with(|base| {
        let serp = json!({"organic_results": [
            {"title": "Ethereum", "snippet": "launched 2015", "link": format!("{base}/page")},
            {"title": "bad", "snippet": "no link"}
        ]});
        vec![(200, serp.to_string()), (200, page.to_string())]
    });
    let search = HttpSearch::new(HttpSearchSettings {
        endpoint: format!("{}/search", server.base),
        api_key: Some("serp-key".into()),
        timeout: Duration::from_secs(5),
        requests_per_second: 1000.0,
        max_page_chars: 4000,
    })
    .unwrap();
    let results = search.search("which chain launched in 2015", 8).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].title, "Ethereum");
    let text = search.fetch_content(&results[0]).unwrap();
    assert_eq!(text, "Ethereum & Bitcoin");
    let reqs = server.requests.lock().unwrap();
    assert!(reqs[0].target.starts_with("/search?"));
    assert!(reqs[0].target.contains("q=which+chain+launched+in+2015") || reqs[0].target.contains("q=which%20chain"));
    assert!(reqs[0].target.contains("num=8") && reqs[0].target.contains("api_key=serp-key"));
}

#[test]
fn http_data_source_reads_records() {
    let body = json!([{"key": "brent crude", "value": 82.5, "as_of": "2024-05-01"}, {"key": "note", "value": "flat"}]);
    let server = serve(vec![(200, body.to_string())]);
    let source = HttpDataSource::new(format!("{}/quotes", server.base), Duration::from_secs(5)).unwrap();
    let records = source.records().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].render(), "brent crude = 82.5 (as of 2024-05-01)");
    assert_eq!(records[1].render(), "note = flat");
}
