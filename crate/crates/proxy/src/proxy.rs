use std::collections::HashMap;
use std::net::IpAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use bytes::Bytes;
use hyper::header::{self, HeaderMap, HeaderName, HeaderValue};
use hyper::{Method, Request, Response, StatusCode};
use serde::{Deserialize, Serialize};
use serde_json::json;
use staggercast::agents::UserChoice;
use staggercast::demand::Request as DemandRequest;
use staggercast::policy::{
    transit_price, ChoiceKind, CreditLedger, CreditReason, DecisionContext, EnactmentDecision, LinkUtilization,
    RuleSet, UserHistory,
};
use staggercast::rewrite::rewrite_html;
use staggercast::ConfigError;

use crate::bypass::{self, BypassSigner};
use crate::clock::Clock;
use crate::config::{decode_hex, DomainEntry, ManagedDomainTable, ProxyConfig};
use crate::log::{LogRecord, RequestLog};
use crate::pages;
use crate::session::{new_token, Alternative, OriginalRequest, ResolveError, SessionStore, StagingSession};
use crate::upstream::Upstream;

pub const USER_HEADER: &str = "x-staggercast-user";
const OFFER_PREFIX: &str = "/staggercast/offer/";
const UI_PREFIX: &str = "/staggercast/ui/";

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "proxy-connection",
    "keep-alive",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "proxy-authorization",
    "proxy-authenticate",
];

/// Configuration that is swapped as a whole on reload.
#[derive(Debug)]
pub struct Snapshot {
    pub config: ProxyConfig,
    pub table: ManagedDomainTable,
    pub ruleset: RuleSet,
}

impl Snapshot {
    pub fn new(config: ProxyConfig, ruleset: RuleSet) -> Result<Self, ConfigError> {
        config.validate()?;
        let table = ManagedDomainTable::new(config.managed_domains.clone())?;
        Ok(Self { config, table, ruleset })
    }
}

/// Transfer the cache should complete before the user comes back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefetchJob {
    pub user_id: u64,
    pub url: String,
    pub not_before_s: f64,
    pub deadline_s: f64,
}

#[derive(Debug, Default)]
struct UserState {
    day: i64,
    history: UserHistory,
}

/// Body of `POST /staggercast/choice`, as JSON or as a form.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceForm {
    token: String,
    choice: String,
    #[serde(default)]
    new_access_s: Option<f64>,
    #[serde(default)]
    alternative_content_id: Option<String>,
}

pub struct Proxy {
    snapshot: RwLock<Arc<Snapshot>>,
    utilization: RwLock<LinkUtilization>,
    sessions: SessionStore,
    bypass: BypassSigner,
    users: Mutex<HashMap<u64, UserState>>,
    ledger: Mutex<CreditLedger<u64>>,
    prefetch: Mutex<Vec<PrefetchJob>>,
    clock: Arc<dyn Clock>,
    upstream: Arc<dyn Upstream>,
    log: RequestLog,
}

type Resp = Response<Bytes>;

fn respond(status: StatusCode, content_type: &str, body: impl Into<Bytes>) -> Resp {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, content_type)
        .header(header::CACHE_CONTROL, "no-store")
        .body(body.into())
        .expect("static response parts are valid")
}

fn html(status: StatusCode, body: String) -> Resp {
    respond(status, "text/html; charset=utf-8", body)
}

fn json_resp(status: StatusCode, value: serde_json::Value) -> Resp {
    respond(status, "application/json", value.to_string())
}

fn redirect(location: &str, body: Option<serde_json::Value>) -> Resp {
    let mut resp = match body {
        Some(v) => json_resp(StatusCode::FOUND, v),
        None => respond(StatusCode::FOUND, "text/plain; charset=utf-8", ""),
    };
    if let Ok(v) = HeaderValue::from_str(location) {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    resp
}

/// Error in the format the client asked for.
fn failure(status: StatusCode, json: bool, text: &str) -> Resp {
    if json {
        json_resp(status, json!({ "error": text }))
    } else {
        let title = status.canonical_reason().unwrap_or("Error");
        html(status, pages::message(title, text))
    }
}

fn accepts_json(headers: &HeaderMap) -> bool {
    headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("application/json"))
}

fn is_json_body(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim_start().starts_with("application/json"))
}

fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let named: Vec<HeaderName> = headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|n| HeaderName::from_bytes(n.trim().as_bytes()).ok())
        .collect();
    for name in named {
        headers.remove(name);
    }
    for name in HOP_BY_HOP {
        headers.remove(*name);
    }
}

/// Host (without port) and absolute URL of the resource a client asked for.
fn target(req: &Request<Bytes>) -> Option<(String, String)> {
    let uri = req.uri();
    let pq = uri.path_and_query().map_or("/", |p| p.as_str());
    if let (Some(scheme), Some(authority)) = (uri.scheme_str(), uri.authority()) {
        return Some((authority.host().to_ascii_lowercase(), format!("{scheme}://{authority}{pq}")));
    }
    let host = req.headers().get(header::HOST)?.to_str().ok()?.trim();
    let authority: hyper::http::uri::Authority = host.parse().ok()?;
    Some((authority.host().to_ascii_lowercase(), format!("http://{authority}{pq}")))
}

fn day_of(now_s: f64, utc_offset_s: i64) -> i64 {
    ((now_s + utc_offset_s as f64) / 86_400.0).floor() as i64
}

fn time_of_day(now_s: f64, utc_offset_s: i64) -> f64 {
    (now_s + utc_offset_s as f64).rem_euclid(86_400.0)
}

fn choice_name(c: &UserChoice) -> &'static str {
    match c {
        UserChoice::Continue => "continue",
        UserChoice::Delay { .. } => "delay",
        UserChoice::ShiftContent { .. } => "shift_content",
    }
}

fn content_type_for(name: &str) -> &'static str {
    match name.rsplit('.').next() {
        Some("js") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("html") => "text/html; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

impl Proxy {
    pub fn new(
        config: ProxyConfig,
        ruleset: RuleSet,
        upstream: Arc<dyn Upstream>,
        clock: Arc<dyn Clock>,
        log: RequestLog,
    ) -> Result<Self, ConfigError> {
        let snapshot = Snapshot::new(config, ruleset)?;
        let ttl = snapshot.config.bypass_ttl_s;
        let bypass = match snapshot.config.bypass_secret_hex.as_deref().and_then(decode_hex) {
            Some(key) => BypassSigner::new(key, ttl),
            None => BypassSigner::random(ttl),
        };
        Ok(Self {
            utilization: RwLock::new(snapshot.config.link_utilization),
            snapshot: RwLock::new(Arc::new(snapshot)),
            sessions: SessionStore::new(),
            bypass,
            users: Mutex::new(HashMap::new()),
            ledger: Mutex::new(CreditLedger::default()),
            prefetch: Mutex::new(Vec::new()),
            clock,
            upstream,
            log,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Replace configuration and rules; in-flight requests finish on the old ones.
    pub fn reload(&self, config: ProxyConfig, ruleset: RuleSet) -> Result<(), ConfigError> {
        let snapshot = Arc::new(Snapshot::new(config, ruleset)?);
        *self.snapshot.write().expect("snapshot lock") = snapshot;
        Ok(())
    }

    pub fn set_link_utilization(&self, u: LinkUtilization) {
        *self.utilization.write().expect("utilization lock") = u;
    }

    pub fn credit_balance(&self, user_id: u64) -> u64 {
        self.ledger.lock().expect("ledger lock").balance(&user_id)
    }

    pub fn prefetch_jobs(&self) -> Vec<PrefetchJob> {
        self.prefetch.lock().expect("prefetch lock").clone()
    }

    pub fn session(&self, token: &str) -> Option<StagingSession> {
        self.sessions.get(token, self.clock.now_s())
    }

    pub fn prompts_today(&self, user_id: u64) -> u32 {
        let snap = self.snapshot();
        let day = day_of(self.clock.now_s(), snap.config.utc_offset_s);
        let users = self.users.lock().expect("user lock");
        users.get(&user_id).filter(|s| s.day == day).map_or(0, |s| s.history.prompts_today)
    }

    fn record(&self, user: Option<u64>, domain: &str, decision: &str, choice: Option<&str>, resp: &Resp) {
        self.log.write(&LogRecord {
            time: self.clock.now_s(),
            user,
            domain: domain.to_string(),
            decision: decision.to_string(),
            choice: choice.map(str::to_string),
            bytes: resp.body().len() as u64,
        });
    }

    pub async fn handle(&self, req: Request<Bytes>, peer: IpAddr) -> Resp {
        if req.uri().path().starts_with("/staggercast/") {
            return self.control(req).await;
        }
        let Some((host, url)) = target(&req) else {
            let resp = failure(StatusCode::BAD_REQUEST, false, "The request names no host.");
            self.record(None, "", "bad_request", None, &resp);
            return resp;
        };
        let snap = self.snapshot();
        let now = self.clock.now_s();

        let (url, marker) = bypass::strip(&url);
        if let Some(marker) = marker {
            if self.bypass.redeem(&url, &marker, now) {
                let resp = self.forward(req, &url).await;
                self.record(None, &host, "bypass", None, &resp);
                return resp;
            }
        }

        let Some(entry) = snap.table.lookup(&host) else {
            let resp = self.forward(req, &url).await;
            self.record(None, &host, "unmanaged", None, &resp);
            return resp;
        };
        let user = self.identify(&req, peer, &snap.config);
        let Some(user) = user.filter(|_| req.method() == Method::GET) else {
            let resp = self.forward(req, &url).await;
            self.record(user, &host, "pass_through", None, &resp);
            return resp;
        };

        let content_id = format!("{host}{}", req.uri().path());
        let request = self.demand_request(entry, &snap.config, &content_id, user, now);
        let decision = self.decide(&snap, &request, user, now);
        match decision {
            EnactmentDecision::PassThrough => {
                let resp = self.forward(req, &url).await;
                self.record(Some(user), &host, "pass_through", None, &resp);
                resp
            }
            EnactmentDecision::Stage { offer, options, .. } => {
                let cfg = &snap.config;
                let delay_window = Some(cfg.off_peak_window.next_occurrence(now, cfg.utc_offset_s as f64));
                let alternatives: Vec<Alternative> = cfg
                    .cache
                    .items
                    .iter()
                    .filter(|i| i.cached && i.content_id != content_id && i.genre == request.genre)
                    .take(cfg.max_alternatives)
                    .map(|i| Alternative {
                        content_id: i.content_id.clone(),
                        title: i.title.clone(),
                        genre: i.genre.to_string(),
                        cached: i.cached,
                    })
                    .collect();
                let options = options
                    .into_iter()
                    .filter(|k| match k {
                        ChoiceKind::Continue => true,
                        ChoiceKind::Delay => delay_window.is_some(),
                        ChoiceKind::ShiftContent => !alternatives.is_empty(),
                    })
                    .collect();
                let session = StagingSession {
                    token: new_token(),
                    user_id: user,
                    domain: host.clone(),
                    original: OriginalRequest {
                        method: req.method().to_string(),
                        url: url.clone(),
                        headers: req
                            .headers()
                            .iter()
                            .filter_map(|(k, v)| Some((k.to_string(), v.to_str().ok()?.to_string())))
                            .collect(),
                    },
                    offer,
                    options,
                    delay_window,
                    alternatives,
                    congestion: self.utilization.read().expect("utilization lock").max(),
                    created_s: now,
                    expires_s: now + cfg.session_ttl_s as f64,
                    state: crate::session::SessionState::Pending,
                };
                let with_ui = cfg.ui_dir.is_some();
                let resp = html(StatusCode::OK, pages::staging(&session, cfg.utc_offset_s, with_ui, now));
                self.sessions.insert(session, now);
                self.record(Some(user), &host, "stage", None, &resp);
                resp
            }
            EnactmentDecision::Redirect { .. } => {
                if snap.config.cache.is_cached(&content_id) {
                    let resp = redirect(&snap.config.cache.url_for(&content_id), None);
                    self.record(Some(user), &host, "redirect", None, &resp);
                    resp
                } else {
                    let resp = self.forward(req, &url).await;
                    self.record(Some(user), &host, "redirect_miss", None, &resp);
                    resp
                }
            }
            EnactmentDecision::Rewrite { spec, .. } => {
                if !snap.config.consents(user) {
                    let resp = self.forward(req, &url).await;
                    self.record(Some(user), &host, "rewrite_refused", None, &resp);
                    return resp;
                }
                let resp = self.forward(req, &url).await;
                let resp = rewrite_response(resp, |body| {
                    rewrite_html(body, &spec, |id| snap.config.cache.is_cached(id)).into_owned()
                });
                self.record(Some(user), &host, "rewrite", None, &resp);
                resp
            }
        }
    }

    fn identify(&self, req: &Request<Bytes>, peer: IpAddr, cfg: &ProxyConfig) -> Option<u64> {
        if cfg.trust_user_header {
            if let Some(id) = req.headers().get(USER_HEADER).and_then(|v| v.to_str().ok()?.trim().parse().ok()) {
                return Some(id);
            }
        }
        cfg.subscriber(peer).map(|s| s.user_id)
    }

    fn demand_request(
        &self,
        entry: &DomainEntry,
        cfg: &ProxyConfig,
        content_id: &str,
        user: u64,
        now: f64,
    ) -> DemandRequest {
        let item = cfg.cache.get(content_id);
        DemandRequest {
            request_id: 0,
            user_id: user,
            app: entry.app_class,
            content_id: content_id.to_string(),
            genre: item.map_or(entry.genre, |i| i.genre),
            size_bytes: item.map_or(entry.assumed_size_bytes, |i| i.size_bytes),
            arrival_s: now,
            live: entry.live,
        }
    }

    /// Evaluate the rules with the user's prompt budget held locked, so
    /// concurrent requests cannot both take the last prompt.
    fn decide(&self, snap: &Snapshot, request: &DemandRequest, user: u64, now: f64) -> EnactmentDecision {
        let cfg = &snap.config;
        let tod = time_of_day(now, cfg.utc_offset_s);
        let mut ctx = DecisionContext::for_request(request, tod);
        ctx.link_utilization = *self.utilization.read().expect("utilization lock");
        ctx.transit_price = transit_price(&cfg.price_schedule, tod);
        let day = day_of(now, cfg.utc_offset_s);
        let mut users = self.users.lock().expect("user lock");
        let state = users.entry(user).or_default();
        if state.day != day {
            state.day = day;
            state.history.prompts_today = 0;
        }
        ctx.user_history = state.history.clone();
        let decision = snap.ruleset.evaluate(request, &mut ctx);
        state.history.prompts_today = ctx.user_history.prompts_today;
        decision
    }

    async fn forward(&self, req: Request<Bytes>, url: &str) -> Resp {
        let (mut parts, body) = req.into_parts();
        let Ok(uri) = url.parse() else {
            return failure(StatusCode::BAD_REQUEST, false, "The request URL is not valid.");
        };
        parts.uri = uri;
        parts.version = hyper::Version::HTTP_11;
        strip_hop_by_hop(&mut parts.headers);
        parts.headers.remove(USER_HEADER);
        match self.upstream.fetch(Request::from_parts(parts, body)).await {
            Ok(mut resp) => {
                strip_hop_by_hop(resp.headers_mut());
                resp
            }
            Err(e) => failure(StatusCode::BAD_GATEWAY, false, &e.to_string()),
        }
    }

    async fn control(&self, req: Request<Bytes>) -> Resp {
        let path = req.uri().path().to_string();
        let json = accepts_json(req.headers());
        if let Some(token) = path.strip_prefix(OFFER_PREFIX) {
            if req.method() != Method::GET {
                return failure(StatusCode::METHOD_NOT_ALLOWED, json, "Use GET.");
            }
            return self.offer(token, json);
        }
        if path == pages::CHOICE_PATH {
            if req.method() != Method::POST {
                return failure(StatusCode::METHOD_NOT_ALLOWED, json, "Use POST.");
            }
            return self.choice(req);
        }
        if let Some(name) = path.strip_prefix(UI_PREFIX) {
            return self.ui_file(name).await;
        }
        failure(StatusCode::NOT_FOUND, json, "No such page.")
    }

    fn offer(&self, token: &str, json: bool) -> Resp {
        let now = self.clock.now_s();
        let snap = self.snapshot();
        let Some(s) = self.sessions.get(token, now) else {
            return failure(StatusCode::GONE, json, "This offer has expired or was already answered.");
        };
        if !json {
            return html(
                StatusCode::OK,
                pages::staging(&s, snap.config.utc_offset_s, snap.config.ui_dir.is_some(), now),
            );
        }
        let options: Vec<&str> = s
            .options
            .iter()
            .map(|k| match k {
                ChoiceKind::Continue => "continue",
                ChoiceKind::Delay => "delay",
                ChoiceKind::ShiftContent => "shift_content",
            })
            .collect();
        json_resp(
            StatusCode::OK,
            json!({
                "token": s.token,
                "kind": s.offer.kind.name(),
                "description": s.offer.kind.describe(s.offer.magnitude),
                "magnitude": s.offer.magnitude,
                "expiry_s": (s.expires_s - now).max(0.0).floor() as u64,
                "expires_at_s": s.expires_s,
                "options": options,
                "delay_window": s.delay_window.map(|(a, b)| json!({ "start_s": a, "end_s": b })),
                "alternatives": s.alternatives,
                "credits": s.offer.credit_points(snap.config.credits_per_accept),
                "transparency": {
                    "reason": "Links to your area are congested; moving or swapping this download relieves them.",
                    "congestion": s.congestion,
                },
                "original_url": s.original.url,
            }),
        )
    }

    fn choice(&self, req: Request<Bytes>) -> Resp {
        let now = self.clock.now_s();
        let snap = self.snapshot();
        let cfg = &snap.config;
        let json = accepts_json(req.headers()) || is_json_body(req.headers());
        let form: Result<ChoiceForm, String> = if is_json_body(req.headers()) {
            serde_json::from_slice(req.body()).map_err(|e| e.to_string())
        } else {
            parse_form(req.body())
        };
        let form = match form {
            Ok(f) => f,
            Err(e) => {
                let resp = failure(StatusCode::BAD_REQUEST, json, &format!("Malformed choice: {e}"));
                self.record(None, "", "choice", None, &resp);
                return resp;
            }
        };
        let resolved = self.sessions.resolve(&form.token, now, |s| {
            let (kind, choice) = match form.choice.as_str() {
                "continue" => (ChoiceKind::Continue, UserChoice::Continue),
                "delay" => {
                    let t = form.new_access_s.ok_or("Pick a time to download later.")?;
                    let (start, end) = s.delay_window.ok_or("Delay is not offered.")?;
                    if t.is_nan() || t <= now {
                        return Err("That time has already passed.");
                    }
                    if !(start..end).contains(&t) {
                        return Err("That time is outside the offered window.");
                    }
                    (ChoiceKind::Delay, UserChoice::Delay { new_access_s: t })
                }
                "shift_content" => {
                    let id = form.alternative_content_id.clone().ok_or("Pick an alternative.")?;
                    if !s.alternatives.iter().any(|a| a.content_id == id) {
                        return Err("That alternative was not offered.");
                    }
                    (ChoiceKind::ShiftContent, UserChoice::ShiftContent { alternative_content_id: id })
                }
                _ => return Err("Unknown choice."),
            };
            if !s.options.contains(&kind) {
                return Err("That choice was not offered.");
            }
            Ok((choice, ()))
        });
        let session = match resolved {
            Ok((s, ())) => s,
            Err(ResolveError::Gone) => {
                let resp = failure(StatusCode::GONE, json, "This offer has expired or was already answered.");
                self.record(None, "", "choice", None, &resp);
                return resp;
            }
            Err(ResolveError::Invalid(msg)) => {
                let resp = failure(StatusCode::BAD_REQUEST, json, msg);
                self.record(None, "", "choice", None, &resp);
                return resp;
            }
        };
        let crate::session::SessionState::Resolved(choice) = &session.state else {
            unreachable!("resolve leaves the session resolved")
        };
        let user = session.user_id;
        {
            let mut users = self.users.lock().expect("user lock");
            let h = &mut users.entry(user).or_default().history;
            if choice.is_accept() {
                h.accepts_total += 1;
            } else {
                h.declines_total += 1;
            }
        }
        let credits = if choice.is_accept() {
            let points = session.offer.credit_points(cfg.credits_per_accept);
            let mut ledger = self.ledger.lock().expect("ledger lock");
            if points > 0 {
                ledger
                    .issue_credits(&user, points, now, CreditReason::OfferAccepted(session.offer.kind))
                    .expect("positive credit issue");
            }
            points
        } else {
            0
        };
        let resp = match choice {
            UserChoice::Continue => {
                let location = self.bypass.sign(&session.original.url, now);
                redirect(&location, json.then(|| json!({ "action": "navigate", "location": location })))
            }
            UserChoice::Delay { new_access_s } => {
                let (start, end) = session.delay_window.expect("validated above");
                self.prefetch.lock().expect("prefetch lock").push(PrefetchJob {
                    user_id: user,
                    url: session.original.url.clone(),
                    not_before_s: start.max(now),
                    deadline_s: new_access_s.min(end),
                });
                let balance = self.credit_balance(user);
                if json {
                    json_resp(
                        StatusCode::OK,
                        json!({
                            "action": "scheduled",
                            "new_access_s": new_access_s,
                            "credits": credits,
                            "balance": balance,
                        }),
                    )
                } else {
                    html(StatusCode::OK, pages::scheduled(*new_access_s, cfg.utc_offset_s, credits, balance))
                }
            }
            UserChoice::ShiftContent { alternative_content_id } => {
                let location = cfg.cache.url_for(alternative_content_id);
                redirect(
                    &location,
                    json.then(|| json!({ "action": "navigate", "location": location, "credits": credits })),
                )
            }
        };
        self.record(Some(user), &session.domain, "choice", Some(choice_name(choice)), &resp);
        resp
    }

    async fn ui_file(&self, name: &str) -> Resp {
        let snap = self.snapshot();
        let Some(dir) = &snap.config.ui_dir else {
            return failure(StatusCode::NOT_FOUND, false, "No staging UI bundle is installed.");
        };
        let safe = !name.is_empty()
            && name.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
            && !name.starts_with('.');
        if !safe {
            return failure(StatusCode::NOT_FOUND, false, "No such file.");
        }
        match tokio::fs::read(Path::new(dir).join(name)).await {
            Ok(bytes) => respond(StatusCode::OK, content_type_for(name), bytes),
            Err(_) => failure(StatusCode::NOT_FOUND, false, "No such file."),
        }
    }
}

fn parse_form(body: &[u8]) -> Result<ChoiceForm, String> {
    let mut form = ChoiceForm::default();
    let (mut token, mut choice) = (None, None);
    for (k, v) in url::form_urlencoded::parse(body) {
        match &*k {
            "token" => token = Some(v.into_owned()),
            "choice" => choice = Some(v.into_owned()),
            "new_access_s" => {
                form.new_access_s = Some(v.parse().map_err(|_| format!("new_access_s: not a number: {v}"))?)
            }
            "alternative_content_id" => form.alternative_content_id = Some(v.into_owned()),
            _ => {}
        }
    }
    form.token = token.ok_or("missing token")?;
    form.choice = choice.ok_or("missing choice")?;
    Ok(form)
}

/// Apply `f` to an uncompressed HTML body and fix up its length.
fn rewrite_response(resp: Resp, f: impl FnOnce(&[u8]) -> Vec<u8>) -> Resp {
    let headers = resp.headers();
    let is_html = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.to_ascii_lowercase().starts_with("text/html"));
    let encoded = headers
        .get(header::CONTENT_ENCODING)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| !v.eq_ignore_ascii_case("identity"));
    if !resp.status().is_success() || !is_html || encoded {
        return resp;
    }
    let (mut parts, body) = resp.into_parts();
    let body = Bytes::from(f(&body));
    parts.headers.insert(header::CONTENT_LENGTH, HeaderValue::from(body.len()));
    Response::from_parts(parts, body)
}
