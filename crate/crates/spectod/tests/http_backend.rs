use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use spectod::http::{completions_url, HttpBackend, HttpConfig};
use spectod_core::backend::{Backend, BackendError, GenerationRequest};
use spectod_core::dialogue::{Role, TurnRecord};
use spectod_core::prompt::ChatPayload;

/// One scripted reply: status, body and a delay before answering.
#[derive(Clone)]
struct Reply(u16, &'static str, Duration);

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hotel"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

/// Serves `script` in order, repeating the last reply once it runs out.
fn serve(script: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let stub = Stub {
        url,
        hits: hits.clone(),
        bodies: bodies.clone(),
        peak: peak.clone(),
    };
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let n = hits.fetch_add(1, Ordering::SeqCst);
            let Reply(status, body, delay) = script[n.min(script.len() - 1)].clone();
            let (bodies, live, peak) = (bodies.clone(), live.clone(), peak.clone());
            thread::spawn(move || {
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                bodies.lock().unwrap().push(read_request(&mut stream));
                thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                live.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    stub
}

fn backend(stub: &Stub, attempts: u32, concurrency: usize) -> HttpBackend {
    let mut c = HttpConfig::new(completions_url(&stub.url).unwrap());
    c.max_attempts = attempts;
    c.base_delay = Duration::from_millis(5);
    c.max_delay = Duration::from_millis(20);
    c.concurrency = concurrency;
    c.api_key = Some("sk-test".into());
    HttpBackend::new(c)
}

fn request() -> GenerationRequest {
    let payload = ChatPayload {
        system: TurnRecord::new(Role::System, "pick a domain"),
        history: vec![vec![
            TurnRecord::new(Role::User, "hi"),
            TurnRecord::new(Role::Function, "{\"name\":\"null\",\"arguments\":{}}"),
            TurnRecord::new(Role::Observation, "Do not need to call function."),
            TurnRecord::new(Role::Assistant, "Action: General\nResponse: hello"),
        ]],
        current: vec![TurnRecord::new(Role::User, "a hotel please")],
    };
    let mut r = GenerationRequest::new(payload, "d/1/ds".into());
    r.timeout = Duration::from_secs(5);
    r
}

const QUICK: Duration = Duration::ZERO;

#[test]
fn retries_server_errors_then_succeeds() {
    let stub = serve(vec![
        Reply(503, "busy", QUICK),
        Reply(503, "busy", QUICK),
        Reply(200, OK_BODY, QUICK),
    ]);
    let r = backend(&stub, 4, 2).generate(&request()).unwrap();
    assert_eq!(r.text, "hotel");
    assert_eq!(r.attempts, 3);
    assert_eq!(r.usage.prompt_tokens, 3);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(vec![Reply(400, "bad request", QUICK)]);
    let e = backend(&stub, 4, 2).generate(&request()).unwrap_err();
    assert!(
        matches!(
            e,
            BackendError::Status {
                status: 400,
                attempts: 1,
                ..
            }
        ),
        "{e:?}"
    );
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn gives_up_after_max_attempts() {
    let stub = serve(vec![Reply(502, "down", QUICK)]);
    let e = backend(&stub, 3, 2).generate(&request()).unwrap_err();
    assert!(
        matches!(
            e,
            BackendError::Status {
                status: 502,
                attempts: 3,
                ..
            }
        ),
        "{e:?}"
    );
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn malformed_success_body_is_not_retried() {
    let stub = serve(vec![Reply(200, "{\"choices\":[]}", QUICK)]);
    let e = backend(&stub, 4, 2).generate(&request()).unwrap_err();
    assert!(matches!(e, BackendError::MalformedResponse(_)), "{e:?}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeouts_are_retried() {
    let stub = serve(vec![
        Reply(200, OK_BODY, Duration::from_millis(1500)),
        Reply(200, OK_BODY, QUICK),
    ]);
    let mut req = request();
    req.timeout = Duration::from_millis(300);
    let r = backend(&stub, 3, 2).generate(&req).unwrap();
    assert_eq!(r.attempts, 2);
}

#[test]
fn six_roles_are_folded_onto_three() {
    let stub = serve(vec![Reply(200, OK_BODY, QUICK)]);
    backend(&stub, 1, 1).generate(&request()).unwrap();
    let body: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    let messages = body["messages"].as_array().unwrap();
    let roles: Vec<&str> = messages
        .iter()
        .map(|m| m["role"].as_str().unwrap())
        .collect();
    assert_eq!(
        roles,
        ["system", "user", "assistant", "user", "assistant", "user"]
    );
    assert!(messages[2]["content"]
        .as_str()
        .unwrap()
        .starts_with("<|function|>\n"));
    assert!(messages[3]["content"]
        .as_str()
        .unwrap()
        .starts_with("<|observation|>\n"));
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn concurrency_is_capped() {
    let stub = serve(vec![Reply(200, OK_BODY, Duration::from_millis(100))]);
    let b = Arc::new(backend(&stub, 1, 2));
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let b = b.clone();
            thread::spawn(move || b.generate(&request()).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 6);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
}
