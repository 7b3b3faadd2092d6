//! Time sources. Everything that stamps records takes a [`Clock`] so tests
//! can drive datestamps from a simulated clock instead of wall time.

use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, SubsecRound, Utc};

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now().trunc_subsecs(0)
    }
}

/// Manually advanced clock shared between every node of a simulation.
#[derive(Debug, Clone)]
pub struct SimClock {
    inner: Arc<Mutex<DateTime<Utc>>>,
}

impl SimClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(start.trunc_subsecs(0))),
        }
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.inner.lock().expect("clock poisoned");
        *now += by;
    }

    pub fn advance_secs(&self, secs: i64) {
        self.advance(Duration::seconds(secs));
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.inner.lock().expect("clock poisoned") = to.trunc_subsecs(0);
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        *self.inner.lock().expect("clock poisoned")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn sim_clock_is_shared_between_clones() {
        let start = Utc.with_ymd_and_hms(2002, 6, 1, 12, 0, 0).unwrap();
        let clock = SimClock::new(start);
        let other = clock.clone();
        other.advance_secs(90);
        assert_eq!(clock.now(), start + Duration::seconds(90));
    }
}
