//! The HTTP client and the endpoint-backed subcommands against a small
//! in-process server.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use refdial_cli::run_from;
use refdial_core::endpoint::{EndpointError, HttpEndpoint, PredictRequest, PredictionService, TextGenerator};
use refdial_core::eval::PredictionRecord;
use refdial_core::jsonl;
use serde_json::{json, Value};

struct Request {
    headers: HashMap<String, String>,
    body: Value,
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

/// Serves each connection on its own thread; one request per connection.
fn serve(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/predict", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    let log = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            let log = log.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut headers = HashMap::new();
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                    }
                }
                let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                log.lock().unwrap().push(body.clone());
                let (status, text) = handler(&Request { headers, body });
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    (addr, seen)
}

/// Answers single or batched predict requests with an echo.
fn echo(req: &Request) -> (u16, String) {
    let one = |r: &Value| json!({"id": r["id"], "text": format!("echo {}", r["prompt"].as_str().unwrap_or(""))});
    let body = match &req.body {
        Value::Array(rs) => Value::Array(rs.iter().map(one).collect()),
        r => one(r),
    };
    (200, body.to_string())
}

fn closed_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/predict", l.local_addr().unwrap());
    drop(l);
    addr
}

#[test]
fn client_speaks_both_wire_shapes() {
    let (addr, seen) = serve(|req| {
        if req.headers.get("authorization").map(String::as_str) != Some("Bearer tok") {
            return (401, "{}".into());
        }
        if req.body.get("prompt").is_some() && req.body.get("id").is_none() {
            return (200, json!({"texts": ["one", "two"]}).to_string());
        }
        echo(req)
    });
    let client = HttpEndpoint::new(addr.clone(), Some("tok".into()), Duration::from_secs(5));
    assert_eq!(client.generate("hi").unwrap(), ["one", "two"]);
    let one = client.predict(&[PredictRequest { id: "a".into(), prompt: "p".into() }]).unwrap();
    assert_eq!(one[0].text, "echo p");

    let batched = HttpEndpoint::new(addr.clone(), Some("tok".into()), Duration::from_secs(5)).with_batch_size(3);
    let reqs: Vec<PredictRequest> = (0..3).map(|i| PredictRequest { id: i.to_string(), prompt: format!("p{i}") }).collect();
    let got = batched.predict(&reqs).unwrap();
    assert_eq!(got.len(), 3);
    assert!(seen.lock().unwrap().iter().any(|b| b.is_array()));

    let anon = HttpEndpoint::new(addr, None, Duration::from_secs(5));
    assert_eq!(anon.generate("hi"), Err(EndpointError::Status(401)));
}

#[test]
fn client_reports_timeouts_and_refusals() {
    let (addr, _) = serve(|req| {
        std::thread::sleep(Duration::from_millis(1500));
        echo(req)
    });
    let slow = HttpEndpoint::new(addr, None, Duration::from_millis(200));
    let e = slow.predict(&[PredictRequest { id: "a".into(), prompt: "p".into() }]).unwrap_err();
    assert_eq!(e, EndpointError::Timeout);

    let down = HttpEndpoint::new(closed_port(), None, Duration::from_secs(1));
    assert!(matches!(down.generate("x"), Err(EndpointError::Unavailable(_))));
}

fn write_items(dir: &std::path::Path, n: usize) -> std::path::PathBuf {
    let p = dir.join("items.jsonl");
    let lines: Vec<String> = (0..n).map(|i| json!({"item_id": format!("i{i}"), "prompt": format!("q{i}"), "extra": 1}).to_string()).collect();
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

#[test]
fn fetch_predictions_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path(), 9);
    let out = dir.path().join("preds.jsonl");
    let (addr, _) = serve(echo);
    let code = run_from([
        "refdial", "fetch-predictions", "--items", items.to_str().unwrap(), "--output", out.to_str().unwrap(),
        "--address", &addr, "--batch-size", "2", "--concurrency", "3",
    ]);
    assert_eq!(code, 0);
    let preds: Vec<PredictionRecord> = jsonl::read(&out).unwrap();
    assert_eq!(preds.len(), 9);
    assert_eq!(preds[4].item_id, "i4");
    assert_eq!(preds[4].raw_text, "echo q4");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("preds.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["fetched"], 9);
}

#[test]
fn fetch_flaky_item_is_retried() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path(), 10);
    let out = dir.path().join("preds.jsonl");
    let failed = Mutex::new(false);
    let (addr, _) = serve(move |req| {
        if req.body["id"] == "i7" && !std::mem::replace(&mut *failed.lock().unwrap(), true) {
            return (503, "{}".into());
        }
        echo(req)
    });
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[endpoint]\nbackoff_ms = 1\nmax_retries = 2\n").unwrap();
    let code = run_from([
        "refdial", "fetch-predictions", "--config", cfg.to_str().unwrap(), "--items", items.to_str().unwrap(),
        "--output", out.to_str().unwrap(), "--address", &addr,
    ]);
    assert_eq!(code, 0);
    let preds: Vec<PredictionRecord> = jsonl::read(&out).unwrap();
    assert_eq!(preds[7].raw_text, "echo q7");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("preds.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["retries"], 1);
}

#[test]
fn fetch_with_endpoint_down_exits_3_with_cursor_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path(), 3);
    let out = dir.path().join("preds.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[endpoint]\nbackoff_ms = 1\nmax_retries = 1\n").unwrap();
    let code = run_from([
        "refdial", "fetch-predictions", "--config", cfg.to_str().unwrap(), "--items", items.to_str().unwrap(),
        "--output", out.to_str().unwrap(), "--address", &closed_port(),
    ]);
    assert_eq!(code, 3);
    let cursor: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("preds.jsonl.cursor")).unwrap()).unwrap();
    assert_eq!(cursor["completed"], 0);
}

#[test]
fn expand_templates_keeps_valid_rewrites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec.jsonl");
    let (addr, seen) = serve(|_| {
        let texts = ["Where is <expr> in <image>? Give its box.\nPoint me to <expr>.\n<image> Locate <expr>, please."];
        (200, json!({ "texts": texts }).to_string())
    });
    let code = run_from([
        "refdial", "expand-templates", "--task", "REC", "--count", "5", "--purpose", "locate a described object",
        "--output", out.to_str().unwrap(), "--address", &addr,
    ]);
    assert_eq!(code, 0);
    let lines: Vec<Value> = jsonl::read(&out).unwrap();
    // the middle candidate lacks <image>
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l["task"] == "REC"));
    let prompt = seen.lock().unwrap()[0]["prompt"].as_str().unwrap().to_string();
    assert!(prompt.contains("locate a described object"));

    let code = run_from([
        "refdial", "expand-templates", "--task", "REC", "--purpose", "x", "--output", out.to_str().unwrap(),
        "--address", &closed_port(),
    ]);
    assert_eq!(code, 3);
}
