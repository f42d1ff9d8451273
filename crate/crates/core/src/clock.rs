use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

/// Source of completion timestamps. Replay runs use [`StepClock`] so traces
/// are byte-identical across runs.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: every call advances by a fixed step.
#[derive(Debug)]
pub struct StepClock {
    next_ms: AtomicI64,
    step_ms: i64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step_ms: i64) -> Self {
        Self {
            next_ms: AtomicI64::new(start.timestamp_millis()),
            step_ms,
        }
    }

    /// 2024-06-01T00:00:00Z, one millisecond per tick.
    pub fn fixed() -> Self {
        Self::new(Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap(), 1)
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let ms = self.next_ms.fetch_add(self.step_ms, Ordering::SeqCst);
        Utc.timestamp_millis_opt(ms).unwrap()
    }
}
