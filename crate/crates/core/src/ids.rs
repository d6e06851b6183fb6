//! Clocks and identifier generation.
//!
//! Identifiers are time-prefixed so that lexical order follows creation
//! order: `<prefix>_<13 hex digits of unix millis><6 hex digits of counter><8 hex digits of entropy>`.
//! Both the clock and the entropy source are injectable so that a meeting can
//! be replayed byte-for-byte under test.

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

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

/// Deterministic clock: starts at a fixed instant and advances by a fixed
/// step on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    next_millis: AtomicI64,
    step_millis: i64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_millis: i64) -> Self {
        Self {
            next_millis: AtomicI64::new(start.timestamp_millis()),
            step_millis,
        }
    }

    /// 2025-01-01T00:00:00Z, one second per reading.
    pub fn fixed() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(), 1_000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let millis = self.next_millis.fetch_add(self.step_millis, Ordering::SeqCst);
        Utc.timestamp_millis_opt(millis)
            .single()
            .expect("stepping clock left the representable range")
    }
}

pub struct IdGenerator {
    clock: Arc<dyn Clock>,
    counter: AtomicU64,
    rng: Mutex<StdRng>,
}

impl IdGenerator {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            counter: AtomicU64::new(0),
            rng: Mutex::new(StdRng::from_entropy()),
        }
    }

    pub fn seeded(clock: Arc<dyn Clock>, seed: u64) -> Self {
        Self {
            clock,
            counter: AtomicU64::new(0),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn next(&self, prefix: &str) -> String {
        let millis = self.clock.now().timestamp_millis().max(0) as u64;
        let count = self.counter.fetch_add(1, Ordering::SeqCst) & 0xff_ffff;
        let entropy: u32 = self.rng.lock().expect("id rng poisoned").gen();
        format!("{prefix}_{millis:013x}{count:06x}{entropy:08x}")
    }
}

impl std::fmt::Debug for IdGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdGenerator")
            .field("counter", &self.counter)
            .finish_non_exhaustive()
    }
}
