use std::fmt;

use thiserror::Error;

/// A configuration document failed to parse or validate.
///
/// `path` is a JSON-path-like locator (`apps.VideoOnDemand.genre_mix`,
/// `[2].trigger.peak_window`) pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }

    /// Prefix the path with an enclosing field or document name.
    pub fn within(mut self, prefix: &str) -> Self {
        self.path = join_path(prefix, &self.path);
        self
    }
}

pub(crate) fn join_path(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path.is_empty() || path == ".") {
        (true, _) => path.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) if path.starts_with('[') => format!("{prefix}{path}"),
        (false, false) => format!("{prefix}.{path}"),
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Deserialize a JSON document, reporting the path of the first offending field.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ConfigError::new(if path == "." { String::new() } else { path }, strip_location(&inner))
    })
}

/// Same as [`from_json_str`] for an already-parsed value.
pub fn from_json_value<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ConfigError::new(if path == "." { String::new() } else { path }, strip_location(&inner))
    })
}

fn strip_location(err: &serde_json::Error) -> String {
    let text = err.to_string();
    if err.line() == 0 {
        return text;
    }
    match text.rfind(" at line ") {
        Some(idx) => format!("{} (line {}, column {})", &text[..idx], err.line(), err.column()),
        None => text,
    }
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Row(#[from] TraceError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("credit amount must be positive")]
    NonPositive,
    #[error("insufficient balance: have {balance}, requested {requested}")]
    Insufficient { balance: u64, requested: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("object {content_id} of {size} bytes exceeds cache capacity {capacity}")]
    TooLarge { content_id: String, size: u64, capacity: u64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no user profile for user {0}")]
    MissingProfile(u64),
    #[error("event for request {request_id} at {time_s}s falls outside the horizon {horizon_s}s")]
    EventAfterHorizon { request_id: u64, time_s: f64, horizon_s: u64 },
    #[error("request {request_id} arrives at {arrival_s}s, outside the horizon {horizon_s}s")]
    ArrivalOutsideHorizon { request_id: u64, arrival_s: f64, horizon_s: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}
