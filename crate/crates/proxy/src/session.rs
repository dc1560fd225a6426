//! Staging sessions keyed by unguessable tokens.

use std::collections::HashMap;
use std::sync::Mutex;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::TryRngCore;
use serde::Serialize;
use staggercast::agents::UserChoice;
use staggercast::policy::{ChoiceKind, IncentiveOffer};

/// 128 random bits from the operating system, base64url without padding.
pub fn new_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.try_fill_bytes(&mut bytes).expect("operating system RNG");
    URL_SAFE_NO_PAD.encode(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OriginalRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alternative {
    pub content_id: String,
    pub title: String,
    pub genre: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Pending,
    Resolved(UserChoice),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagingSession {
    pub token: String,
    pub user_id: u64,
    pub domain: String,
    pub original: OriginalRequest,
    pub offer: IncentiveOffer,
    pub options: Vec<ChoiceKind>,
    /// Absolute `[start, end)` the user may defer to.
    pub delay_window: Option<(f64, f64)>,
    pub alternatives: Vec<Alternative>,
    /// Link utilization when the offer was made, shown to the user.
    pub congestion: f64,
    pub created_s: f64,
    pub expires_s: f64,
    pub state: SessionState,
}

impl StagingSession {
    pub fn live(&self, now_s: f64) -> bool {
        self.state == SessionState::Pending && now_s < self.expires_s
    }
}

/// Why a session could not be resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolveError<E> {
    /// Unknown, expired or already resolved.
    Gone,
    /// The choice itself was rejected; the session stays pending.
    Invalid(E),
}

/// Sessions behind one lock, so each token transitions at most once.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, StagingSession>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store `session`, dropping any that have expired by `now_s`.
    pub fn insert(&self, session: StagingSession, now_s: f64) {
        let mut map = self.sessions.lock().expect("session lock");
        map.retain(|_, s| now_s < s.expires_s);
        map.insert(session.token.clone(), session);
    }

    /// A pending, unexpired session.
    pub fn get(&self, token: &str, now_s: f64) -> Option<StagingSession> {
        let map = self.sessions.lock().expect("session lock");
        map.get(token).filter(|s| s.live(now_s)).cloned()
    }

    /// Resolve a pending session with the choice `check` accepts.
    pub fn resolve<T, E>(
        &self,
        token: &str,
        now_s: f64,
        check: impl FnOnce(&StagingSession) -> Result<(UserChoice, T), E>,
    ) -> Result<(StagingSession, T), ResolveError<E>> {
        let mut map = self.sessions.lock().expect("session lock");
        let session = map.get_mut(token).filter(|s| s.live(now_s)).ok_or(ResolveError::Gone)?;
        let (choice, extra) = check(session).map_err(ResolveError::Invalid)?;
        session.state = SessionState::Resolved(choice);
        Ok((session.clone(), extra))
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
