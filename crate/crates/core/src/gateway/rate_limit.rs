//! Sliding-window request limiter shared by every worker that talks to
//! one endpoint.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::clock::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Admits at most `limit` requests in any trailing 60 second window.
pub struct RateLimiter {
    limit: usize,
    admitted: Mutex<VecDeque<chrono::DateTime<chrono::Utc>>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(limit: usize, clock: Arc<dyn Clock>) -> RateLimiter {
        assert!(limit >= 1, "a zero-request budget would never admit anyone");
        RateLimiter {
            limit,
            admitted: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    /// Admits immediately if the window has room, otherwise returns how
    /// long the caller must wait before trying again.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let now = self.clock.now();
        let window = chrono::Duration::from_std(WINDOW).unwrap();
        let mut admitted = self.admitted.lock().unwrap();
        while let Some(front) = admitted.front() {
            if *front + window <= now {
                admitted.pop_front();
            } else {
                break;
            }
        }
        if admitted.len() < self.limit {
            admitted.push_back(now);
            Ok(())
        } else {
            let oldest = *admitted.front().unwrap();
            let wait = (oldest + window - now).to_std().unwrap_or(Duration::ZERO);
            // Never report a zero wait while the window is full, or the
            // caller would spin without progress on a coarse clock.
            Err(wait.max(Duration::from_millis(1)))
        }
    }

    /// Blocks (through the clock, so virtually under test) until admitted.
    pub fn acquire(&self) {
        loop {
            match self.try_acquire() {
                Ok(()) => return,
                Err(wait) => self.clock.sleep(wait),
            }
        }
    }
}
