//! HTTP exchange abstraction with live, record and replay implementations.
//!
//! Fixture files are named by the SHA-256 of the canonical request text
//! (`METHOD URL\n` followed by the body), with the elevation API key redacted
//! so fixtures neither leak keys nor depend on them:
//!
//! ```text
//! fixtures/<sha256>.req   canonical request text
//! fixtures/<sha256>.resp  raw response body
//! ```
//!
//! Only successful (2xx) exchanges are recorded; replay answers 200.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Query parameter whose value is replaced before hashing or storing.
pub const REDACTED_PARAM: &str = "API_Key";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn post(url: impl Into<String>, body: impl Into<Vec<u8>>) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    /// `METHOD URL\n` + body, with the API key redacted.
    pub fn canonical(&self) -> Vec<u8> {
        let mut out = format!("{} {}\n", self.method.as_str(), redact_url(&self.url)).into_bytes();
        out.extend_from_slice(&self.body);
        out
    }

    pub fn fixture_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical()))
    }
}

/// Replaces the value of every `API_Key=` query parameter with `REDACTED`.
pub fn redact_url(url: &str) -> String {
    let Some(q) = url.find('?') else {
        return url.to_string();
    };
    let (base, query) = url.split_at(q + 1);
    let params: Vec<String> = query
        .split('&')
        .map(|pair| match pair.split_once('=') {
            Some((k, _)) if k == REDACTED_PARAM => format!("{k}=REDACTED"),
            _ => pair.to_string(),
        })
        .collect();
    format!("{base}{}", params.join("&"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("no fixture for request {line:?} (expected {hash}.resp)")]
    Unmatched { line: String, hash: String },
    #[error("fixture I/O: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).execute(req)
    }
}

/// Real network access through a blocking HTTP client.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for LiveTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

const MAX_BODY: u64 = 512 * 1024 * 1024;

impl Transport for LiveTransport {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(t.to_string()),
            other => TransportError::Network(other.to_string()),
        };
        let result = match req.method {
            Method::Get => {
                let mut r = self.agent.get(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k, v);
                }
                r.call()
            }
            Method::Post => {
                let mut r = self.agent.post(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k, v);
                }
                r.send(&req.body[..])
            }
        };
        let mut resp = result.map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(map_err)?;
        Ok(HttpResponse { status, body })
    }
}

/// Serves recorded fixtures and never touches the network.
pub struct ReplayTransport {
    dir: PathBuf,
}

impl ReplayTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl Transport for ReplayTransport {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let hash = req.fixture_hash();
        let path = self.dir.join(format!("{hash}.resp"));
        match fs::read(&path) {
            Ok(body) => Ok(HttpResponse::ok(body)),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(TransportError::Unmatched {
                line: format!("{} {}", req.method.as_str(), redact_url(&req.url)),
                hash,
            }),
            Err(e) => Err(TransportError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

/// Forwards to an inner transport and stores every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let resp = self.inner.execute(req)?;
        if resp.is_success() {
            let hash = req.fixture_hash();
            let io = |e: std::io::Error| TransportError::Io(e.to_string());
            fs::create_dir_all(&self.dir).map_err(io)?;
            write_atomic(&self.dir.join(format!("{hash}.req")), &req.canonical()).map_err(io)?;
            write_atomic(&self.dir.join(format!("{hash}.resp")), &resp.body).map_err(io)?;
        } else {
            log::warn!("not recording {} {} (status {})", req.method.as_str(), redact_url(&req.url), resp.status);
        }
        Ok(resp)
    }
}

/// Keeps a copy of every outbound request, as sent, before delegating.
pub struct CapturingTransport<T> {
    inner: T,
    seen: Mutex<Vec<HttpRequest>>,
}

impl<T: Transport> CapturingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl<T: Transport> Transport for CapturingTransport<T> {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.execute(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(HttpResponse);

    impl Transport for Fixed {
        fn execute(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn redaction() {
        assert_eq!(
            redact_url("https://h/p?a=1&API_Key=secret&b=2"),
            "https://h/p?a=1&API_Key=REDACTED&b=2"
        );
        assert_eq!(redact_url("https://h/p?API_Key=x"), "https://h/p?API_Key=REDACTED");
        assert_eq!(redact_url("https://h/p"), "https://h/p");
    }

    #[test]
    fn hash_ignores_key_and_headers() {
        let a = HttpRequest::get("https://h/p?API_Key=one").header("User-Agent", "a");
        let b = HttpRequest::get("https://h/p?API_Key=two");
        assert_eq!(a.fixture_hash(), b.fixture_hash());
        let c = HttpRequest::post("https://h/p", "body");
        let d = HttpRequest::post("https://h/p", "other");
        assert_ne!(c.fixture_hash(), d.fixture_hash());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let req = HttpRequest::post("https://example.org/api", "q=1");
        let rec = RecordingTransport::new(Fixed(HttpResponse::ok("hello")), dir.path());
        assert_eq!(rec.execute(&req).unwrap().body, b"hello");

        let stored = fs::read(dir.path().join(format!("{}.req", req.fixture_hash()))).unwrap();
        assert_eq!(stored, b"POST https://example.org/api\nq=1");

        let replay = ReplayTransport::new(dir.path());
        assert_eq!(replay.execute(&req).unwrap(), HttpResponse::ok("hello"));
        let other = HttpRequest::get("https://example.org/else");
        assert!(matches!(replay.execute(&other), Err(TransportError::Unmatched { .. })));
    }

    #[test]
    fn failures_are_not_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let req = HttpRequest::get("https://example.org/x");
        let rec = RecordingTransport::new(
            Fixed(HttpResponse {
                status: 500,
                body: b"boom".to_vec(),
            }),
            dir.path(),
        );
        assert_eq!(rec.execute(&req).unwrap().status, 500);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn capture_sees_raw_requests() {
        let cap = CapturingTransport::new(Fixed(HttpResponse::ok("")));
        cap.execute(&HttpRequest::get("https://h/?API_Key=k")).unwrap();
        assert_eq!(cap.requests()[0].url, "https://h/?API_Key=k");
        assert_eq!(cap.count(), 1);
    }
}
