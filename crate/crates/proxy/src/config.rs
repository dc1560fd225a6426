//! Proxy configuration: managed domains, subscribers, the cache catalog and
//! the clock and pricing context rules are evaluated in.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use staggercast::demand::{AppClass, Genre};
use staggercast::error::from_json_str;
use staggercast::policy::{LinkUtilization, PriceSchedule, TimeWindow};
use staggercast::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    /// Matches the domain itself and every subdomain.
    pub suffix: String,
    pub app_class: AppClass,
    #[serde(default)]
    pub genre: Genre,
    /// Size assumed for requests whose object is not in the catalog.
    #[serde(default)]
    pub assumed_size_bytes: u64,
    #[serde(default)]
    pub live: bool,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

/// Managed domains, matched longest suffix first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManagedDomainTable {
    entries: Vec<DomainEntry>,
}

impl ManagedDomainTable {
    pub fn new(entries: Vec<DomainEntry>) -> Result<Self, ConfigError> {
        let mut seen = BTreeSet::new();
        let mut entries: Vec<DomainEntry> = entries
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.suffix = e.suffix.trim_matches('.').to_ascii_lowercase();
                if e.suffix.is_empty() {
                    return Err(ConfigError::new(format!("managed_domains[{i}].suffix"), "must not be empty"));
                }
                if !seen.insert(e.suffix.clone()) {
                    return Err(ConfigError::new(
                        format!("managed_domains[{i}].suffix"),
                        format!("duplicate suffix {}", e.suffix),
                    ));
                }
                Ok(e)
            })
            .collect::<Result<_, _>>()?;
        entries.sort_by(|a, b| b.suffix.len().cmp(&a.suffix.len()).then_with(|| a.suffix.cmp(&b.suffix)));
        Ok(Self { entries })
    }

    pub fn lookup(&self, host: &str) -> Option<&DomainEntry> {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.entries.iter().find(|e| {
            host == e.suffix || (host.ends_with(&e.suffix) && host.as_bytes()[host.len() - e.suffix.len() - 1] == b'.')
        })
    }

    pub fn entries(&self) -> &[DomainEntry] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subscriber {
    pub address: IpAddr,
    pub user_id: u64,
    /// Whether the subscriber agreed to transparent page rewriting.
    #[serde(default)]
    pub consent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    /// Host and path of the object, e.g. `video.example/films/a`.
    pub content_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub genre: Genre,
    #[serde(default)]
    pub size_bytes: u64,
    /// Held by the cache right now.
    #[serde(default)]
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    /// Cached objects are served from `{base_url}/{content_id}`.
    pub base_url: String,
    #[serde(default)]
    pub items: Vec<CatalogEntry>,
}

impl CacheConfig {
    pub fn get(&self, content_id: &str) -> Option<&CatalogEntry> {
        self.items.iter().find(|i| i.content_id == content_id)
    }

    pub fn is_cached(&self, content_id: &str) -> bool {
        self.get(content_id).is_some_and(|i| i.cached)
    }

    pub fn url_for(&self, content_id: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), content_id)
    }
}

fn default_ttl() -> u64 {
    300
}

fn default_bypass_ttl() -> u64 {
    60
}

fn default_credits() -> u64 {
    10
}

fn default_alternatives() -> usize {
    3
}

fn default_off_peak() -> TimeWindow {
    TimeWindow::new(7200.0, 21600.0).expect("valid window")
}

fn default_price() -> PriceSchedule {
    PriceSchedule { default: 0.0, windows: Vec::new() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default)]
    pub managed_domains: Vec<DomainEntry>,
    #[serde(default)]
    pub subscribers: Vec<Subscriber>,
    /// Take the subscriber id from an `x-staggercast-user` header when present.
    #[serde(default)]
    pub trust_user_header: bool,
    pub cache: CacheConfig,
    /// Advertised window for Delay choices, in local time of day.
    #[serde(default = "default_off_peak")]
    pub off_peak_window: TimeWindow,
    /// Local time minus UTC, in seconds.
    #[serde(default)]
    pub utc_offset_s: i64,
    #[serde(default = "default_ttl")]
    pub session_ttl_s: u64,
    #[serde(default = "default_bypass_ttl")]
    pub bypass_ttl_s: u64,
    /// Last reported link utilization; replaced at runtime by monitoring.
    #[serde(default)]
    pub link_utilization: LinkUtilization,
    #[serde(default = "default_price")]
    pub price_schedule: PriceSchedule,
    /// Credits for accepted offers whose incentive is not itself points.
    #[serde(default = "default_credits")]
    pub credits_per_accept: u64,
    #[serde(default = "default_alternatives")]
    pub max_alternatives: usize,
    /// Directory holding the staging page script bundle, if built.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// Request log destination; standard output when absent.
    #[serde(default)]
    pub request_log: Option<PathBuf>,
    /// Hex HMAC key for bypass markers; random per process when absent.
    #[serde(default)]
    pub bypass_secret_hex: Option<String>,
}

impl ProxyConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = from_json_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ManagedDomainTable::new(self.managed_domains.clone())?;
        let mut users = BTreeMap::new();
        for (i, s) in self.subscribers.iter().enumerate() {
            if users.insert(s.address, s.user_id).is_some() {
                return Err(ConfigError::new(format!("subscribers[{i}].address"), "duplicate address"));
            }
        }
        if !self.cache.base_url.starts_with("http://") && !self.cache.base_url.starts_with("https://") {
            return Err(ConfigError::new("cache.base_url", "must be an http(s) URL"));
        }
        if self.session_ttl_s == 0 {
            return Err(ConfigError::new("session_ttl_s", "must be positive"));
        }
        if self.bypass_ttl_s == 0 {
            return Err(ConfigError::new("bypass_ttl_s", "must be positive"));
        }
        if self.utc_offset_s.abs() >= 86_400 {
            return Err(ConfigError::new("utc_offset_s", "must be within one day"));
        }
        if let Some(hex) = &self.bypass_secret_hex {
            if decode_hex(hex).is_none_or(|k| k.len() < 16) {
                return Err(ConfigError::new("bypass_secret_hex", "must be at least 16 hex-encoded bytes"));
            }
        }
        self.price_schedule.validate().map_err(|e| e.within("price_schedule"))?;
        Ok(())
    }

    pub fn subscriber(&self, address: IpAddr) -> Option<&Subscriber> {
        self.subscribers.iter().find(|s| s.address == address)
    }

    pub fn consents(&self, user_id: u64) -> bool {
        self.subscribers.iter().any(|s| s.user_id == user_id && s.consent)
    }
}

pub(crate) fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}
