//! One-shot signed markers that let a user continue past a staging page.
//!
//! The marker rides in the query string as `sc_bypass=<value>`, where value
//! is base64url(expiry ‖ nonce ‖ HMAC-SHA256(url ‖ expiry ‖ nonce)).

use std::collections::HashMap;
use std::sync::Mutex;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use rand::TryRngCore;
use sha2::Sha256;

pub const PARAM: &str = "sc_bypass";

type HmacSha256 = Hmac<Sha256>;

pub struct BypassSigner {
    key: Vec<u8>,
    ttl_s: u64,
    used: Mutex<HashMap<[u8; 16], u64>>,
}

impl BypassSigner {
    pub fn new(key: Vec<u8>, ttl_s: u64) -> Self {
        Self { key, ttl_s, used: Mutex::new(HashMap::new()) }
    }

    pub fn random(ttl_s: u64) -> Self {
        let mut key = vec![0u8; 32];
        rand::rngs::OsRng.try_fill_bytes(&mut key).expect("operating system RNG");
        Self::new(key, ttl_s)
    }

    fn mac(&self, url: &str, expiry: u64, nonce: &[u8]) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC takes any key length");
        mac.update(url.as_bytes());
        mac.update(&expiry.to_be_bytes());
        mac.update(nonce);
        mac
    }

    /// `url` with a fresh marker appended.
    pub fn sign(&self, url: &str, now_s: f64) -> String {
        let expiry = now_s as u64 + self.ttl_s;
        let mut nonce = [0u8; 16];
        rand::rngs::OsRng.try_fill_bytes(&mut nonce).expect("operating system RNG");
        let tag = self.mac(url, expiry, &nonce).finalize().into_bytes();
        let mut raw = Vec::with_capacity(8 + 16 + tag.len());
        raw.extend_from_slice(&expiry.to_be_bytes());
        raw.extend_from_slice(&nonce);
        raw.extend_from_slice(&tag);
        let sep = if url.contains('?') { '&' } else { '?' };
        format!("{url}{sep}{PARAM}={}", URL_SAFE_NO_PAD.encode(raw))
    }

    /// Check and consume the marker for `url` (the URL without it).
    pub fn redeem(&self, url: &str, marker: &str, now_s: f64) -> bool {
        let Ok(raw) = URL_SAFE_NO_PAD.decode(marker) else { return false };
        if raw.len() != 8 + 16 + 32 {
            return false;
        }
        let expiry = u64::from_be_bytes(raw[..8].try_into().expect("8 bytes"));
        let nonce: [u8; 16] = raw[8..24].try_into().expect("16 bytes");
        if now_s >= expiry as f64 || self.mac(url, expiry, &nonce).verify_slice(&raw[24..]).is_err() {
            return false;
        }
        let mut used = self.used.lock().expect("bypass lock");
        used.retain(|_, exp| now_s < *exp as f64);
        used.insert(nonce, expiry).is_none()
    }
}

/// Split a marker off a URL, leaving every other byte as it was.
pub fn strip(url: &str) -> (String, Option<String>) {
    let Some((base, query)) = url.split_once('?') else { return (url.to_string(), None) };
    let (query, fragment) = match query.split_once('#') {
        Some((q, f)) => (q, Some(f)),
        None => (query, None),
    };
    let prefix = format!("{PARAM}=");
    let mut marker = None;
    let kept: Vec<&str> = query
        .split('&')
        .filter(|part| match part.strip_prefix(&prefix) {
            Some(v) if marker.is_none() => {
                marker = Some(v.to_string());
                false
            }
            _ => true,
        })
        .collect();
    if marker.is_none() {
        return (url.to_string(), None);
    }
    let mut out = base.to_string();
    if !kept.is_empty() {
        out.push('?');
        out.push_str(&kept.join("&"));
    }
    if let Some(f) = fragment {
        out.push('#');
        out.push_str(f);
    }
    (out, marker)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_inverts_sign() {
        let signer = BypassSigner::random(60);
        for url in ["http://a.example/x", "http://a.example/x?q=1&r=%20", "http://a.example/?"] {
            let signed = signer.sign(url, 1000.0);
            let (back, marker) = strip(&signed);
            assert_eq!(back, url);
            assert!(signer.redeem(&back, &marker.unwrap(), 1001.0));
        }
    }

    #[test]
    fn markers_are_one_shot_bound_and_expiring() {
        let signer = BypassSigner::random(60);
        let (url, marker) = strip(&signer.sign("http://a.example/x", 1000.0));
        let marker = marker.unwrap();
        assert!(!signer.redeem("http://a.example/y", &marker, 1001.0));
        assert!(!signer.redeem(&url, &marker, 1060.0));
        assert!(signer.redeem(&url, &marker, 1059.0));
        assert!(!signer.redeem(&url, &marker, 1059.0));
        assert!(!BypassSigner::random(60).redeem(&url, &signer.sign(&url, 1000.0)[url.len() + 11..], 1001.0));
        assert!(!signer.redeem(&url, "not-a-marker", 1001.0));
    }
}
