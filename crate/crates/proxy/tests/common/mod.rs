//! Local origin server, a proxy wired to it, and a raw HTTP/1 client.

#![allow(dead_code)]

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::body::Frame;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Request, Response};
use hyper_util::rt::TokioIo;
use sha2::{Digest, Sha256};
use staggercast::policy::RuleSet;
use staggercast_proxy::{HttpUpstream, ManualClock, Proxy, ProxyConfig, RequestLog, Upstream, UpstreamFuture};
use tokio::net::{TcpListener, TcpStream};

/// Deterministic pseudo-random payload of `n` bytes.
pub fn payload(n: usize) -> Vec<u8> {
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15 ^ n as u64;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}

pub fn sha(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub const LISTING: &str = concat!(
    "<!DOCTYPE html><html><body><ul>",
    "<li data-content-id=\"video.example/films/a\">A</li>",
    "<li data-content-id=\"video.example/films/b\">B</li>",
    "<li data-content-id=\"video.example/films/c\">C</li>",
    "</ul></body></html>"
);

/// What the origin returns for `path`, independent of the proxy.
pub fn origin_body(path: &str) -> (Vec<u8>, &'static str) {
    if let Some(n) = path.strip_prefix("/bin/") {
        return (payload(n.parse().unwrap_or(0)), "application/octet-stream");
    }
    if path == "/listing" {
        return (LISTING.as_bytes().to_vec(), "text/html; charset=utf-8");
    }
    (format!("origin body for {path}").into_bytes(), "text/plain")
}

pub struct Origin {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
}

pub async fn spawn_origin() -> Origin {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    tokio::spawn(async move {
        loop {
            let (stream, _) = listener.accept().await.unwrap();
            let counter = counter.clone();
            tokio::spawn(async move {
                let svc = service_fn(move |req: Request<hyper::body::Incoming>| {
                    counter.fetch_add(1, Ordering::SeqCst);
                    async move {
                        let path = req.uri().path().to_string();
                        if path == "/chunked" {
                            // streamed without a content-length
                            let (tx, rx) = tokio::sync::mpsc::channel(4);
                            tokio::spawn(async move {
                                for c in payload(70_000).chunks(8192) {
                                    let _ = tx.send(Ok(Frame::data(Bytes::copy_from_slice(c)))).await;
                                }
                            });
                            return Ok::<_, Infallible>(Response::new(ChannelBody { rx }.boxed()));
                        }
                        if path == "/echo" {
                            let mut text = format!("{} {}\n", req.method(), req.uri());
                            for (k, v) in req.headers() {
                                text.push_str(&format!("{k}: {}\n", v.to_str().unwrap_or("?")));
                            }
                            return Ok(Response::new(Full::new(Bytes::from(text)).boxed()));
                        }
                        let (body, ct) = origin_body(&path);
                        let resp = Response::builder()
                            .header("content-type", ct)
                            .header("x-origin", "yes")
                            .body(Full::new(Bytes::from(body)).boxed())
                            .unwrap();
                        Ok(resp)
                    }
                });
                let _ = http1::Builder::new().serve_connection(TokioIo::new(stream), svc).await;
            });
        }
    });
    Origin { addr, hits }
}

struct ChannelBody {
    rx: tokio::sync::mpsc::Receiver<Result<Frame<Bytes>, Infallible>>,
}

impl hyper::body::Body for ChannelBody {
    type Data = Bytes;
    type Error = Infallible;
    fn poll_frame(
        mut self: std::pin::Pin<&mut Self>,
        cx: &mut std::task::Context<'_>,
    ) -> std::task::Poll<Option<Result<Frame<Bytes>, Infallible>>> {
        self.rx.poll_recv(cx)
    }
}

/// Sends every request to one address whatever host it names, the way a
/// resolver pointed at a test origin would.
pub struct Routed {
    pub inner: HttpUpstream,
    pub to: SocketAddr,
}

impl Upstream for Routed {
    fn fetch(&self, mut request: Request<Bytes>) -> UpstreamFuture<'_> {
        let pq = request.uri().path_and_query().map_or("/".to_string(), |p| p.to_string());
        *request.uri_mut() = format!("http://{}{pq}", self.to).parse().unwrap();
        self.inner.fetch(request)
    }
}

/// 20:00 UTC on some day.
pub const T0: f64 = (1_700_000_000 - 1_700_000_000 % 86_400 + 20 * 3600) as f64;

pub fn config() -> ProxyConfig {
    ProxyConfig::from_json(
        r#"{
        "managed_domains": [
            {"suffix": "video.example", "app_class": "VideoOnDemand", "genre": "Movie", "assumed_size_bytes": 2000000000},
            {"suffix": "live.video.example", "app_class": "LiveVideo", "genre": "Sport", "assumed_size_bytes": 2000000000, "live": true},
            {"suffix": "news.example", "app_class": "Browsing", "assumed_size_bytes": 100000},
            {"suffix": "sync.example", "app_class": "BulkSync", "assumed_size_bytes": 500000000}
        ],
        "subscribers": [
            {"address": "127.0.0.1", "user_id": 1, "consent": true},
            {"address": "10.0.0.2", "user_id": 2, "consent": false}
        ],
        "trust_user_header": true,
        "cache": {"base_url": "http://cache.isp.example", "items": [
            {"content_id": "video.example/films/b", "title": "Film B", "genre": "Movie", "size_bytes": 1500000000, "cached": true},
            {"content_id": "video.example/films/c", "title": "Film C", "genre": "Movie", "size_bytes": 1500000000, "cached": true},
            {"content_id": "video.example/films/d", "title": "Film D", "genre": "Movie", "size_bytes": 1500000000, "cached": false},
            {"content_id": "sync.example/cached.iso", "genre": "None", "size_bytes": 500000000, "cached": true}
        ]},
        "off_peak_window": [7200, 21600],
        "session_ttl_s": 300,
        "link_utilization": {"transit": 0.8, "aggregation": 0.5},
        "credits_per_accept": 10
    }"#,
    )
    .unwrap()
}

/// Stage video, redirect bulk sync, rewrite news pages.
pub fn rules(cap: u32) -> RuleSet {
    RuleSet::from_json(&format!(
        r#"[
        {{"match": {{"app_classes": ["VideoOnDemand"], "min_size_bytes": 100000000, "exclude_live": true}},
          "trigger": {{"utilization_gte": 0.6}}, "per_user_daily_prompt_cap": {cap}, "strategy": "Stage",
          "offer_template": {{"kind": "LoyaltyCredits", "magnitude": 25, "expiry_s": 300}}}},
        {{"match": {{"app_classes": ["BulkSync"]}}, "per_user_daily_prompt_cap": 1000000, "strategy": "Redirect",
          "offer_template": {{"kind": "LoyaltyCredits", "magnitude": 0, "expiry_s": 300}}}},
        {{"match": {{"app_classes": ["Browsing"]}}, "per_user_daily_prompt_cap": 1000000, "strategy": "Rewrite",
          "offer_template": {{"kind": "LoyaltyCredits", "magnitude": 0, "expiry_s": 300}}}}
    ]"#
    ))
    .unwrap()
}

pub struct Harness {
    pub origin: Origin,
    pub proxy: Arc<Proxy>,
    pub addr: SocketAddr,
    pub clock: Arc<ManualClock>,
    pub log: Arc<std::sync::Mutex<Vec<u8>>>,
}

pub async fn harness_with(config: ProxyConfig, ruleset: RuleSet) -> Harness {
    let origin = spawn_origin().await;
    let clock = Arc::new(ManualClock::new(T0));
    let (log, buf) = RequestLog::memory();
    let upstream = Arc::new(Routed { inner: HttpUpstream::new(Duration::from_secs(5)), to: origin.addr });
    let proxy = Arc::new(Proxy::new(config, ruleset, upstream, clock.clone(), log).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(staggercast_proxy::serve(listener, proxy.clone(), std::future::pending()));
    Harness { origin, proxy, addr, clock, log: buf }
}

pub async fn harness() -> Harness {
    harness_with(config(), rules(3)).await
}

pub struct Reply {
    pub status: u16,
    pub headers: hyper::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<String> {
        self.headers.get(name).map(|v| v.to_str().unwrap().to_string())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

/// Send one request over a fresh connection; the URI goes out verbatim,
/// so absolute-form targets exercise forward-proxy mode.
pub async fn send(addr: SocketAddr, req: Request<Full<Bytes>>) -> Reply {
    let stream = TcpStream::connect(addr).await.unwrap();
    let (mut sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(stream)).await.unwrap();
    tokio::spawn(conn);
    let resp = sender.send_request(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    let body = body.collect().await.unwrap().to_bytes().to_vec();
    Reply { status: parts.status.as_u16(), headers: parts.headers, body }
}

pub fn get(url: &str) -> hyper::http::request::Builder {
    let uri: hyper::Uri = url.parse().unwrap();
    let host = uri.authority().unwrap().to_string();
    Request::get(url).header("host", host)
}

pub async fn fetch(addr: SocketAddr, url: &str, user: Option<u64>) -> Reply {
    let mut b = get(url);
    if let Some(u) = user {
        b = b.header(staggercast_proxy::USER_HEADER, u.to_string());
    }
    send(addr, b.body(Full::new(Bytes::new())).unwrap()).await
}

pub async fn post_form(addr: SocketAddr, fields: &[(&str, &str)]) -> Reply {
    let body = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(fields).finish();
    let req = Request::post("/staggercast/choice")
        .header("host", "video.example")
        .header("content-type", "application/x-www-form-urlencoded")
        .body(Full::new(Bytes::from(body)))
        .unwrap();
    send(addr, req).await
}

pub async fn post_json(addr: SocketAddr, value: serde_json::Value) -> Reply {
    let req = Request::post("/staggercast/choice")
        .header("host", "video.example")
        .header("content-type", "application/json")
        .header("accept", "application/json")
        .body(Full::new(Bytes::from(value.to_string())))
        .unwrap();
    send(addr, req).await
}

/// Token embedded in a staging page.
pub fn token_of(page: &str) -> String {
    let start = page.find("data-token=\"").expect("staging page carries a token") + 12;
    page[start..].split('"').next().unwrap().to_string()
}
