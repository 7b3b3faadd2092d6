//! Per-client token buckets.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrottleConfig {
    pub capacity: u32,
    pub refill_per_second: f64,
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        Self {
            capacity: 60,
            refill_per_second: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Admit,
    /// Rejected; a token will be available after this long.
    Reject { retry_after: Duration },
}

impl Decision {
    /// Whole seconds for a `Retry-After` header, rounded up.
    pub fn retry_after_secs(&self) -> Option<u64> {
        match self {
            Decision::Admit => None,
            Decision::Reject { retry_after } => {
                Some(retry_after.as_secs() + u64::from(retry_after.subsec_nanos() > 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    tokens: f64,
    last: Instant,
}

impl Bucket {
    pub fn full(config: &ThrottleConfig, now: Instant) -> Self {
        Self {
            tokens: f64::from(config.capacity),
            last: now,
        }
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    /// Refills for the time elapsed since the last call, then takes one
    /// token if there is one.
    pub fn take(&mut self, config: &ThrottleConfig, now: Instant) -> Decision {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = self.last.max(now);
        let cap = f64::from(config.capacity);
        self.tokens = (self.tokens + elapsed * config.refill_per_second).min(cap);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            return Decision::Admit;
        }
        let wait = if config.refill_per_second > 0.0 {
            (1.0 - self.tokens) / config.refill_per_second
        } else {
            f64::from(u32::MAX)
        };
        Decision::Reject {
            retry_after: Duration::from_secs_f64(wait),
        }
    }
}

/// Buckets keyed by client.
#[derive(Debug)]
pub struct Throttle<K> {
    config: ThrottleConfig,
    buckets: Mutex<HashMap<K, Bucket>>,
}

impl<K: Eq + Hash> Throttle<K> {
    pub fn new(config: ThrottleConfig) -> Self {
        Self {
            config,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ThrottleConfig {
        &self.config
    }

    pub fn check(&self, client: K) -> Decision {
        self.check_at(client, Instant::now())
    }

    pub fn check_at(&self, client: K, now: Instant) -> Decision {
        let mut buckets = self.buckets.lock().expect("throttle lock poisoned");
        buckets
            .entry(client)
            .or_insert_with(|| Bucket::full(&self.config, now))
            .take(&self.config, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TEN: ThrottleConfig = ThrottleConfig {
        capacity: 10,
        refill_per_second: 2.0,
    };

    #[test]
    fn burst_of_capacity_then_reject() {
        let t = Throttle::new(TEN);
        let now = Instant::now();
        for _ in 0..10 {
            assert_eq!(t.check_at("a", now), Decision::Admit);
        }
        let d = t.check_at("a", now);
        assert_eq!(d, Decision::Reject { retry_after: Duration::from_millis(500) });
        assert_eq!(d.retry_after_secs(), Some(1));
        // Independent client.
        assert_eq!(t.check_at("b", now), Decision::Admit);
    }

    #[test]
    fn refills_to_capacity_after_idle() {
        let t = Throttle::new(TEN);
        let now = Instant::now();
        for _ in 0..10 {
            t.check_at("a", now);
        }
        let later = now + Duration::from_secs(5);
        for _ in 0..10 {
            assert_eq!(t.check_at("a", later), Decision::Admit);
        }
        assert!(matches!(t.check_at("a", later), Decision::Reject { .. }));
    }

    proptest! {
        // Over any window the admitted count is at most capacity plus what
        // the window refills.
        #[test]
        fn admitted_rate_is_bounded(
            gaps in proptest::collection::vec(0u64..400, 1..200),
            cap in 1u32..20,
            rate in 0.5f64..10.0,
        ) {
            let config = ThrottleConfig { capacity: cap, refill_per_second: rate };
            let mut bucket = Bucket::full(&config, Instant::now());
            let start = bucket.last;
            let mut now = start;
            let mut admitted = Vec::new();
            for g in gaps {
                now += Duration::from_millis(g);
                if bucket.take(&config, now) == Decision::Admit {
                    admitted.push(now);
                }
            }
            for (i, a) in admitted.iter().enumerate() {
                for (j, b) in admitted.iter().enumerate().skip(i) {
                    let window = b.duration_since(*a).as_secs_f64();
                    let n = (j - i + 1) as f64;
                    prop_assert!(n <= f64::from(cap) + window * rate + 1e-9);
                }
            }
        }
    }
}
