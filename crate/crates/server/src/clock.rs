use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};

/// Millisecond wall clock, injectable so lease expiry can be driven in tests.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;

    fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.now_ms()).single().expect("clock within chrono range")
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        Utc::now().timestamp_millis()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        Self(Arc::new(AtomicI64::new(start_ms)))
    }

    pub fn advance_ms(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set_ms(&self, ms: i64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// ISO-8601 UTC with millisecond precision, e.g. `2024-03-05T09:41:07.250Z`.
pub fn iso8601(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_format_is_millisecond_utc() {
        let t = Utc.timestamp_millis_opt(1_709_631_667_250).unwrap();
        assert_eq!(iso8601(t), "2024-03-05T09:41:07.250Z");
        let parsed: DateTime<Utc> = "2024-03-05T09:41:07.250Z".parse().unwrap();
        assert_eq!(iso8601(parsed), "2024-03-05T09:41:07.250Z");
    }

    #[test]
    fn manual_clock_moves_on_request() {
        let c = ManualClock::new(1000);
        c.advance_ms(500);
        assert_eq!(c.now_ms(), 1500);
    }
}
