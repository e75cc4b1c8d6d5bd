use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use countercurate::clients::{Client, Output, ResolvedJob};
use countercurate::http::HttpClient;
use countercurate::images;
use countercurate_core::jobs::{ExpectedFormat, GenerationJob, ImageParams, ImageRef, JobSpec, LlmRequest, Region};
use countercurate_core::BoundingBox;
use serde_json::{json, Value};

#[derive(Clone, Debug)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves `responses` in order, one per connection, recording requests.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            handle(stream, status, &body, &log);
        }
    });
    (url, seen)
}

fn handle(stream: TcpStream, status: u16, body: &str, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let (mut length, mut auth) = (0usize, None);
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':').unwrap();
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().unwrap(),
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut buf = vec![0; length];
    reader.read_exact(&mut buf).unwrap();
    log.lock().unwrap().push(Seen { path, auth, body: serde_json::from_slice(&buf).unwrap_or(Value::Null) });
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

fn image_answer() -> String {
    let png = images::png_bytes(&images::placeholder(8, 6, "served", &[]));
    json!({ "image_b64": B64.encode(png) }).to_string()
}

fn resolved(spec: JobSpec, source: Option<Vec<u8>>) -> ResolvedJob {
    ResolvedJob { job: GenerationJob::new(spec).unwrap(), source, prompt: None, images: Vec::new() }
}

fn inpaint() -> ResolvedJob {
    let src = images::png_bytes(&images::placeholder(20, 10, "src", &[]));
    resolved(
        JobSpec::Inpaint {
            source: ImageRef::Original("a.png".into()),
            width: 20,
            height: 10,
            regions: vec![Region { bbox: BoundingBox::new(1, 2, 5, 6).unwrap(), prompt: "plant".into() }],
            params: Default::default(),
        },
        Some(src),
    )
}

fn client(url: &str) -> HttpClient {
    HttpClient::new(url, Some("sekrit".into()), Duration::from_secs(5))
}

#[test]
fn inpaint_request_shape_and_image_answer() {
    let (url, seen) = serve(vec![(200, image_answer())]);
    let job = inpaint();
    let out = client(&url).execute(&job).unwrap();
    let Output::Image(png) = out else { panic!("expected an image") };
    assert_eq!(images::decode(&png).unwrap().dimensions(), (8, 6));
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.path, "/v1/generate");
    assert_eq!(req.auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(req.body["kind"], "inpaint");
    assert_eq!(req.body["regions"], json!([{"box": [1, 2, 5, 6], "prompt": "plant"}]));
    assert_eq!(B64.decode(req.body["image_b64"].as_str().unwrap()).unwrap(), job.source.unwrap());
}

#[test]
fn completion_carries_prompt_and_images() {
    let (url, seen) = serve(vec![(200, json!({"text": "a cat sits above a dog"}).to_string())]);
    let request = LlmRequest {
        system: "SYS".into(),
        user: "USER".into(),
        images: vec![("original".into(), "a.png".into())],
        expected_format: ExpectedFormat::FreeText,
    };
    let mut job = resolved(JobSpec::LlmText { request }, None);
    job.images = vec![("original".into(), vec![1, 2, 3])];
    assert_eq!(client(&url).execute(&job).unwrap(), Output::Text("a cat sits above a dog".into()));
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.path, "/v1/complete");
    assert_eq!(req.body["prompt"], "SYS\n\nUSER");
    assert_eq!(req.body["images_b64"], json!([B64.encode([1, 2, 3])]));
}

#[test]
fn status_codes_map_to_retryability() {
    let (url, _) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (400, r#"{"error":"bad box"}"#.into()),
        (200, r#"{"nothing":1}"#.into()),
    ]);
    let c = client(&url);
    let job = inpaint();
    assert!(c.execute(&job).unwrap_err().retryable);
    assert!(c.execute(&job).unwrap_err().retryable);
    let e = c.execute(&job).unwrap_err();
    assert!(!e.retryable && e.message.contains("400") && e.message.contains("bad box"), "{e:?}");
    assert!(!c.execute(&job).unwrap_err().retryable);
}

#[test]
fn unreachable_service_is_retryable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = HttpClient::new(format!("http://127.0.0.1:{port}"), None, Duration::from_millis(500));
    let job = resolved(
        JobSpec::TextToImage { prompt: "x".into(), params: ImageParams { quality: "hd".into(), style: "natural".into() } },
        None,
    );
    assert!(c.execute(&job).unwrap_err().retryable);
}

#[test]
fn dispatch_retries_a_busy_service() {
    use countercurate::clients::Registry;
    use countercurate::dispatch::{dispatch, DispatchOptions};
    use countercurate::store::JobStore;
    use countercurate_core::jobs::{JobKind, JobStatus};

    let (url, seen) = serve(vec![(503, "{}".into()), (200, image_answer())]);
    let dir = tempfile::tempdir().unwrap();
    let job = GenerationJob::new(JobSpec::TextToImage {
        prompt: "a red kite".into(),
        params: ImageParams { quality: "hd".into(), style: "natural".into() },
    })
    .unwrap();
    let mut store = JobStore::create(&dir.path().join("jobs.jsonl"), dir.path(), json!({}));
    store.insert(job.clone());
    let mut reg = Registry::new();
    reg.register(JobKind::TextToImage, Arc::new(client(&url)), 1);
    let opts = DispatchOptions { workers: 1, attempts: 3, backoff: Duration::from_millis(5), seed: 0 };
    let s = dispatch(&mut store, &reg, &opts).unwrap();
    assert_eq!((s.done, s.calls), (1, 2));
    assert_eq!(store.get(&job.job_id).unwrap().status, JobStatus::Done);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[1].body, json!({"kind": "text_to_image", "prompt": "a red kite", "params": {"quality": "hd", "style": "natural"}}));
}
