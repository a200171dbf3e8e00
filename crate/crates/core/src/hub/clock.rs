//! Injected time source. Real runs use the wall clock; tests drive a
//! simulated clock so 30-minute throttles and 24-hour timeouts run in
//! milliseconds.

use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, duration: Duration);
}

/// Wall-clock time.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Simulated clock: `sleep` advances time instantly. One driving thread
/// (the queue scheduler) is assumed; other threads may read `now`.
pub struct SimClock {
    base: DateTime<Utc>,
    elapsed: Mutex<Duration>,
}

impl SimClock {
    pub fn new(base: DateTime<Utc>) -> Self {
        Self {
            base,
            elapsed: Mutex::new(Duration::ZERO),
        }
    }

    pub fn starting_at_epoch() -> Self {
        Self::new(Utc.timestamp_opt(1_600_000_000, 0).unwrap())
    }

    pub fn elapsed(&self) -> Duration {
        *self.elapsed.lock().unwrap()
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        self.base + chrono::Duration::from_std(self.elapsed()).expect("duration in range")
    }

    fn sleep(&self, duration: Duration) {
        let mut elapsed = self.elapsed.lock().unwrap();
        *elapsed += duration;
    }
}
