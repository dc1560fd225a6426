use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Source of wall-clock time in seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now_s(&self) -> f64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_s(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
}

/// Clock that only moves when told to; millisecond resolution.
#[derive(Debug, Default)]
pub struct ManualClock {
    ms: AtomicU64,
}

impl ManualClock {
    pub fn new(now_s: f64) -> Self {
        Self { ms: AtomicU64::new((now_s * 1000.0) as u64) }
    }

    pub fn set(&self, now_s: f64) {
        self.ms.store((now_s * 1000.0) as u64, Ordering::SeqCst);
    }

    pub fn advance(&self, by_s: f64) {
        self.ms.fetch_add((by_s * 1000.0) as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_s(&self) -> f64 {
        self.ms.load(Ordering::SeqCst) as f64 / 1000.0
    }
}
