use core::sync::atomic::{AtomicI64, Ordering};

/// Milliseconds since the Unix epoch.
pub type EpochMillis = i64;

pub const SECOND_MS: i64 = 1_000;
pub const MINUTE_MS: i64 = 60 * SECOND_MS;
pub const HOUR_MS: i64 = 60 * MINUTE_MS;
pub const DAY_MS: i64 = 24 * HOUR_MS;

pub trait Clock {
    fn now_ms(&self) -> EpochMillis;
}

/// A clock that only moves when told to. Each read can optionally advance
/// it by a fixed step so latencies are deterministic in tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicI64,
    step: AtomicI64,
}

impl ManualClock {
    pub fn new(start: EpochMillis) -> Self {
        Self { now: AtomicI64::new(start), step: AtomicI64::new(0) }
    }

    pub fn with_step(start: EpochMillis, step: i64) -> Self {
        Self { now: AtomicI64::new(start), step: AtomicI64::new(step) }
    }

    pub fn set(&self, t: EpochMillis) {
        self.now.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, by: i64) {
        self.now.fetch_add(by, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> EpochMillis {
        let step = self.step.load(Ordering::SeqCst);
        self.now.fetch_add(step, Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ms(&self) -> EpochMillis {
        (**self).now_ms()
    }
}

impl<C: Clock + ?Sized> Clock for alloc::sync::Arc<C> {
    fn now_ms(&self) -> EpochMillis {
        (**self).now_ms()
    }
}
