//! Time sources. Live runs use the system clock; fixture runs and tests
//! inject deterministic clocks so artifacts replay byte for byte and
//! waiting code can be driven without real delays.

use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};

/// A source of "now" plus the ability to wait. `sleep` on the virtual
/// implementations advances time instead of blocking, which lets retry
/// and rate-limit logic run instantly under test.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, d: Duration);
}

/// The real wall clock.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Epoch used for fixture-mode timestamps.
pub fn fixture_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
}

/// Starts at a fixed instant and advances one step on every `now` call.
///
/// Each match in a fixture run gets its own instance with a start derived
/// from the match's position in the run, so timestamps are reproducible
/// no matter how workers are scheduled.
#[derive(Debug)]
pub struct StepClock {
    current: Mutex<DateTime<Utc>>,
    step: chrono::Duration,
}

impl StepClock {
    pub fn starting_at(start: DateTime<Utc>, step: Duration) -> StepClock {
        StepClock {
            current: Mutex::new(start),
            step: chrono::Duration::from_std(step).expect("step fits"),
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let mut current = self.current.lock().unwrap();
        let at = *current;
        *current += self.step;
        at
    }

    fn sleep(&self, d: Duration) {
        let mut current = self.current.lock().unwrap();
        *current += chrono::Duration::from_std(d).expect("duration fits");
    }
}

/// A clock that only moves when told to (or when something sleeps on it).
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<DateTime<Utc>>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> VirtualClock {
        VirtualClock {
            now: Mutex::new(start),
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += chrono::Duration::from_std(d).expect("duration fits");
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}
